import type { MeshPayload } from "./api.js";

/** Client-side Wavefront OBJ parser: triangles and fan-triangulated quads,
 * 1-based indices (negative indices count from the end). */
export function parseObj(text: string): MeshPayload {
  const vertices: number[] = [];
  const faces: number[] = [];
  const lines = text.split(/\r?\n/);
  for (let lineNo = 1; lineNo <= lines.length; lineNo++) {
    const parts = lines[lineNo - 1].trim().split(/\s+/);
    if (parts.length === 0 || parts[0] === "" || parts[0].startsWith("#")) continue;
    if (parts[0] === "v") {
      if (parts.length < 4) throw new Error(`line ${lineNo}: vertex needs 3 coordinates`);
      for (let c = 1; c <= 3; c++) {
        const value = Number(parts[c]);
        if (!Number.isFinite(value)) throw new Error(`line ${lineNo}: bad coordinate ${parts[c]}`);
        vertices.push(value);
      }
    } else if (parts[0] === "f") {
      const corners = parts.slice(1);
      if (corners.length < 3) throw new Error(`line ${lineNo}: face needs at least 3 corners`);
      if (corners.length > 4) throw new Error(`line ${lineNo}: polygon with ${corners.length} corners`);
      const count = vertices.length / 3;
      const idx = corners.map((token) => {
        const head = token.split("/")[0];
        let value = Number(head);
        if (!Number.isInteger(value) || value === 0) {
          throw new Error(`line ${lineNo}: bad face index ${token}`);
        }
        if (value < 0) value = count + 1 + value;
        if (value < 1 || value > count) {
          throw new Error(`line ${lineNo}: face index ${value} out of range (1..${count})`);
        }
        return value - 1;
      });
      faces.push(idx[0], idx[1], idx[2]);
      if (idx.length === 4) faces.push(idx[0], idx[2], idx[3]);
    }
  }
  if (vertices.length < 12 || faces.length < 6) {
    throw new Error("no usable geometry found (need at least 4 vertices and 2 triangles)");
  }
  return { vertices, faces };
}
