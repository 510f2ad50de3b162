/** In-memory stand-in for the inference service, mirroring its contract:
 * deterministic /animate, /retarget whose code replays byte-identically,
 * content-hash target registration, 404/422 errors. Instrumented to count
 * concurrent in-flight requests. */

import type { FetchLike, MeshPayload } from "../src/api.js";

const CODE_DIMS = 128;
const SEMANTIC = 53;

function hashString(text: string): number {
  let h = 2166136261;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 16777619);
  }
  return h >>> 0;
}

function digestOf(values: number[]): string {
  return `d${hashString(JSON.stringify(values)).toString(16)}`;
}

interface Target {
  mesh: MeshPayload;
}

export class FakeServer {
  targets = new Map<string, Target>();
  names = Array.from({ length: SEMANTIC }, (_, i) => `expr_${String(i).padStart(3, "0")}`);
  segmentNames = ["brow", "eye", "nose", "mouth", "jaw"];
  inFlight = 0;
  maxInFlight = 0;
  requestLog: string[] = [];
  /** artificial latency applied to every request (ms, via real timers) */
  latencyMs = 0;
  failNextAnimates = 0;

  /** Deterministic pure "deformation": vertex j moves by a code-dependent offset. */
  animateVertices(target: MeshPayload, code: number[]): number[] {
    const out = target.vertices.slice();
    for (let v = 0; v < out.length / 3; v++) {
      for (let c = 0; c < 3; c++) {
        let acc = 0;
        for (let k = 0; k < code.length; k++) {
          if (code[k] === 0) continue;
          acc += code[k] * Math.sin(0.1 * (k + 1) * (v + 1) + c);
        }
        out[3 * v + c] += 0.01 * acc;
      }
    }
    return out;
  }

  codeForSource(source: MeshPayload): number[] {
    const code = new Array(CODE_DIMS).fill(0);
    const h = hashString(JSON.stringify(source.vertices));
    for (let k = 0; k < CODE_DIMS; k++) {
      code[k] = Math.round(1000 * Math.sin(h + k)) / 1000;
    }
    return code;
  }

  fetch: FetchLike = async (url, init) => {
    this.inFlight += 1;
    this.maxInFlight = Math.max(this.maxInFlight, this.inFlight);
    this.requestLog.push(url.split("?")[0]);
    try {
      if (this.latencyMs > 0) {
        await new Promise((resolve) => setTimeout(resolve, this.latencyMs));
      }
      return this.route(url, init);
    } finally {
      this.inFlight -= 1;
    }
  };

  private json(status: number, body: unknown): Response {
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  private route(url: string, init?: RequestInit): Response {
    const path = url.split("?")[0];
    const body = init?.body ? JSON.parse(init.body as string) : null;
    if (path === "/model/info") {
      return this.json(200, {
        code_dims: CODE_DIMS,
        semantic_exp: SEMANTIC,
        semantic_id: 100,
        L: this.segmentNames.length,
        checkpoint_digest: "fake".repeat(16),
      });
    }
    if (path === "/expression/names") {
      return this.json(200, { names: this.names });
    }
    if (path === "/rig/segments") {
      const params = new URLSearchParams(url.split("?")[1] ?? "");
      const targetId = params.get("target_id") ?? "";
      const target = this.targets.get(targetId);
      if (!target) return this.json(404, { detail: `unknown target_id '${targetId}'` });
      const n = target.mesh.vertices.length / 3;
      const labels = Array.from({ length: n }, (_, i) => i % this.segmentNames.length);
      return this.json(200, { target_id: targetId, labels, names: this.segmentNames });
    }
    if (path === "/target") {
      const mesh = body as MeshPayload;
      if (mesh.vertices.length % 3 !== 0 || mesh.vertices.length < 12) {
        return this.json(422, { detail: "malformed mesh" });
      }
      const id = `t${hashString(JSON.stringify(mesh)).toString(16)}`;
      if (!this.targets.has(id)) this.targets.set(id, { mesh });
      return this.json(200, {
        target_id: id,
        n_vertices: mesh.vertices.length / 3,
        n_faces: mesh.faces.length / 3,
      });
    }
    if (path === "/animate") {
      if (this.failNextAnimates > 0) {
        this.failNextAnimates -= 1;
        throw new TypeError("network down");
      }
      const target = this.targets.get(body.target_id);
      if (!target) return this.json(404, { detail: "unknown target" });
      const code = body.code as number[];
      if (code.length !== SEMANTIC && code.length !== CODE_DIMS) {
        return this.json(422, { detail: `code must have length ${SEMANTIC} or ${CODE_DIMS}` });
      }
      const full = code.length === CODE_DIMS
        ? code
        : [...code, ...new Array(CODE_DIMS - SEMANTIC).fill(0)];
      const vertices = this.animateVertices(target.mesh, full);
      const payload: Record<string, unknown> = {
        vertices,
        faces: target.mesh.faces,
        digest: digestOf(vertices),
      };
      if (url.includes("heat=1")) {
        const heat: number[] = [];
        for (let v = 0; v < vertices.length / 3; v++) {
          heat.push(Math.hypot(
            vertices[3 * v] - target.mesh.vertices[3 * v],
            vertices[3 * v + 1] - target.mesh.vertices[3 * v + 1],
            vertices[3 * v + 2] - target.mesh.vertices[3 * v + 2],
          ));
        }
        payload.heat = heat;
      }
      return this.json(200, payload);
    }
    if (path === "/retarget") {
      const target = this.targets.get(body.target_id);
      if (!target) return this.json(404, { detail: "unknown target" });
      const source = body.source as MeshPayload;
      const degenerate = source.vertices.every((v: number) => v === source.vertices[0]);
      if (source.vertices.length % 3 !== 0 || source.vertices.length < 12 || degenerate) {
        return this.json(422, { detail: "malformed source mesh" });
      }
      const code = this.codeForSource(source);
      const vertices = this.animateVertices(target.mesh, code);
      return this.json(200, {
        vertices,
        faces: target.mesh.faces,
        digest: digestOf(vertices),
        code,
        target_id: body.target_id,
      });
    }
    return this.json(404, { detail: `no route ${path}` });
  }
}

export function cubeObj(scale = 1): string {
  const c = scale;
  return [
    `v ${-c} ${-c} ${-c}`, `v ${c} ${-c} ${-c}`, `v ${c} ${c} ${-c}`, `v ${-c} ${c} ${-c}`,
    `v ${-c} ${-c} ${c}`, `v ${c} ${-c} ${c}`, `v ${c} ${c} ${c}`, `v ${-c} ${c} ${c}`,
    "f 1 3 2", "f 1 4 3", "f 5 6 7", "f 5 7 8",
    "f 1 2 6", "f 1 6 5", "f 2 3 7", "f 2 7 6",
    "f 3 4 8", "f 3 8 7", "f 4 1 5", "f 4 5 8",
  ].join("\n");
}
