/** Typed client for the inference service. The editor never deforms meshes
 * itself: every displayed mesh comes back from these endpoints verbatim. */

export interface MeshPayload {
  vertices: number[];
  faces: number[];
}

export interface ModelInfo {
  code_dims: number;
  semantic_exp: number;
  semantic_id: number;
  L: number;
  checkpoint_digest: string;
}

export interface SegmentInfo {
  target_id: string;
  labels: number[];
  names: string[];
}

export interface TargetInfo {
  target_id: string;
  n_vertices: number;
  n_faces: number;
}

export interface AnimateResponse {
  vertices: number[];
  faces: number[];
  digest: string;
  heat?: number[];
}

export interface RetargetResponse extends AnimateResponse {
  code: number[];
  target_id: string;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body && body.detail) detail = `${response.status}: ${body.detail}`;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private post(path: string, body: unknown): Promise<Response> {
    return this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async modelInfo(): Promise<ModelInfo> {
    return expectJson(await this.fetchImpl(this.baseUrl + "/model/info"));
  }

  async expressionNames(): Promise<string[]> {
    const data = await expectJson<{ names: string[] }>(
      await this.fetchImpl(this.baseUrl + "/expression/names"),
    );
    return data.names;
  }

  async segments(targetId: string): Promise<SegmentInfo> {
    return expectJson(
      await this.fetchImpl(
        this.baseUrl + `/rig/segments?target_id=${encodeURIComponent(targetId)}`,
      ),
    );
  }

  async registerTarget(mesh: MeshPayload): Promise<TargetInfo> {
    return expectJson(await this.post("/target", mesh));
  }

  async animate(targetId: string, code: number[], heat = false): Promise<AnimateResponse> {
    const path = heat ? "/animate?heat=1" : "/animate";
    return expectJson(await this.post(path, { target_id: targetId, code }));
  }

  async retarget(targetId: string, source: MeshPayload): Promise<RetargetResponse> {
    return expectJson(await this.post("/retarget", { target_id: targetId, source }));
  }
}
