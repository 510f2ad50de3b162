import { ApiClient, ApiError, AnimateResponse, MeshPayload, SegmentInfo } from "./api.js";
import { debounce } from "./debounce.js";
import { RequestGate } from "./pending.js";
import { parseObj } from "./obj.js";

export type HeatmapMode = "off" | "displacement" | "segment";

export interface DisplayedMesh {
  /** verbatim server payload (or the uploaded neutral before any edit) */
  vertices: number[];
  faces: number[];
  digest: string;
  heat?: number[];
  origin: "neutral" | "animate" | "retarget";
}

export interface SessionEvents {
  onMesh?(mesh: DisplayedMesh): void;
  onState?(session: EditorSession): void;
  onError?(message: string): void;
}

export const VISIBLE_SLIDER_MIN = -0.25;
export const VISIBLE_SLIDER_MAX = 1.25;
const RETRIES = 3;

/** Editor state machine: slider values, debounced+coalesced animate calls,
 * retarget seeding. Deformation always comes from the server. */
export class EditorSession {
  readonly debounceMs: number;
  codeDims = 128;
  semanticDims = 53;
  names: string[] = [];
  segments: SegmentInfo | null = null;
  targetId: string | null = null;
  neutral: MeshPayload | null = null;
  heatmap: HeatmapMode = "off";
  stale = false;
  lastDigest: string | null = null;
  displayed: DisplayedMesh | null = null;

  private sliderValues: number[] = [];
  private gate: RequestGate<AnimateResponse>;
  private scheduleAnimate: (() => void) & { cancel(): void; flush(): void };

  constructor(
    private api: ApiClient,
    private events: SessionEvents = {},
    options: { debounceMs?: number } = {},
  ) {
    this.debounceMs = options.debounceMs ?? 75;
    this.gate = new RequestGate<AnimateResponse>(
      (response) => this.accept(response, "animate"),
      (error) => this.fail(error),
    );
    this.scheduleAnimate = debounce(() => this.submitAnimate(), this.debounceMs);
  }

  get sliders(): readonly number[] {
    return this.sliderValues;
  }

  get requestsInFlight(): boolean {
    return this.gate.busy;
  }

  async loadTarget(objText: string): Promise<void> {
    let mesh: MeshPayload;
    try {
      mesh = parseObj(objText);
    } catch (error) {
      this.events.onError?.(`could not parse OBJ: ${(error as Error).message}`);
      throw error;
    }
    try {
      const info = await this.api.modelInfo();
      this.codeDims = info.code_dims;
      this.semanticDims = info.semantic_exp;
      const target = await this.api.registerTarget(mesh);
      this.targetId = target.target_id;
      this.neutral = mesh;
      this.names = await this.api.expressionNames();
      try {
        this.segments = await this.api.segments(target.target_id);
      } catch {
        this.segments = null; // model without a skinning encoder
      }
      this.sliderValues = new Array(this.codeDims).fill(0);
      this.scheduleAnimate.cancel();
      this.stale = false;
      this.accept(
        { vertices: mesh.vertices, faces: mesh.faces, digest: "(neutral upload)" },
        "neutral",
      );
    } catch (error) {
      const message = error instanceof ApiError ? error.message : `network failure: ${error}`;
      this.events.onError?.(message);
      throw error;
    }
  }

  setSlider(dim: number, value: number): void {
    this.requireTarget();
    if (!Number.isFinite(value)) throw new Error("slider values must be finite");
    if (dim < 0 || dim >= this.codeDims) throw new Error(`slider index ${dim} out of range`);
    if (dim < this.semanticDims) {
      value = Math.min(VISIBLE_SLIDER_MAX, Math.max(VISIBLE_SLIDER_MIN, value));
    }
    this.sliderValues[dim] = value;
    this.events.onState?.(this);
    this.scheduleAnimate();
  }

  setSliders(values: number[]): void {
    this.requireTarget();
    if (values.length !== this.codeDims) {
      throw new Error(`expected ${this.codeDims} values, got ${values.length}`);
    }
    this.sliderValues = values.slice();
    this.events.onState?.(this);
    this.scheduleAnimate();
  }

  resetSliders(): void {
    this.requireTarget();
    this.sliderValues = new Array(this.codeDims).fill(0);
    this.events.onState?.(this);
    this.scheduleAnimate();
  }

  setHeatmap(mode: HeatmapMode): void {
    if (this.heatmap === mode) return;
    this.heatmap = mode;
    this.events.onState?.(this);
    // displacement colors need server heat values for the current code
    if (mode === "displacement" && this.targetId !== null) this.scheduleAnimate();
  }

  /** Predict the source expression, seed the sliders with the returned code,
   * and show the returned mesh verbatim. */
  async seedFromSource(objText: string): Promise<void> {
    this.requireTarget();
    let source: MeshPayload;
    try {
      source = parseObj(objText);
    } catch (error) {
      this.events.onError?.(`could not parse OBJ: ${(error as Error).message}`);
      throw error;
    }
    try {
      const response = await this.api.retarget(this.targetId as string, source);
      this.scheduleAnimate.cancel(); // the seeded view must stay verbatim
      this.sliderValues = response.code.slice();
      this.accept(response, "retarget");
    } catch (error) {
      const message = error instanceof ApiError ? error.message : `network failure: ${error}`;
      this.events.onError?.(message);
      throw error;
    }
  }

  /** Send the current full code through the single-in-flight gate. */
  private submitAnimate(): void {
    if (this.targetId === null) return;
    const code = this.sliderValues.slice();
    const heat = this.heatmap === "displacement";
    this.gate.submit(() => this.withRetries(() =>
      this.api.animate(this.targetId as string, code, heat),
    ));
  }

  private async withRetries(job: () => Promise<AnimateResponse>): Promise<AnimateResponse> {
    let lastError: unknown;
    for (let attempt = 0; attempt < RETRIES; attempt++) {
      try {
        const result = await job();
        this.stale = false;
        return result;
      } catch (error) {
        lastError = error;
        if (error instanceof ApiError) throw error; // 4xx/5xx: do not hammer
        this.stale = true;
        this.events.onState?.(this);
      }
    }
    throw lastError;
  }

  private accept(response: AnimateResponse, origin: DisplayedMesh["origin"]): void {
    this.displayed = { ...response, origin };
    this.lastDigest = response.digest;
    this.events.onMesh?.(this.displayed);
    this.events.onState?.(this);
  }

  private fail(error: unknown): void {
    const message = error instanceof ApiError ? error.message : `network failure: ${error}`;
    this.events.onError?.(message);
    this.events.onState?.(this);
  }

  private requireTarget(): void {
    if (this.targetId === null) throw new Error("no target loaded");
  }
}
