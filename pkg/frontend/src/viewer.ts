/** Minimal WebGL2 mesh viewer: orbit camera, per-vertex colors, in-place
 * vertex updates (topology fixed while a target is loaded). */

const VERTEX_SHADER = `#version 300 es
layout(location=0) in vec3 position;
layout(location=1) in vec3 normal;
layout(location=2) in vec3 color;
uniform mat4 u_mvp;
uniform mat4 u_model;
out vec3 v_normal;
out vec3 v_color;
void main() {
  gl_Position = u_mvp * vec4(position, 1.0);
  v_normal = mat3(u_model) * normal;
  v_color = color;
}`;

const FRAGMENT_SHADER = `#version 300 es
precision highp float;
in vec3 v_normal;
in vec3 v_color;
out vec4 frag;
void main() {
  vec3 n = normalize(v_normal);
  float diffuse = 0.55 + 0.45 * max(dot(n, normalize(vec3(0.4, 0.6, 1.0))), 0.0);
  frag = vec4(v_color * diffuse, 1.0);
}`;

function perspective(fovY: number, aspect: number, near: number, far: number): Float32Array {
  const f = 1 / Math.tan(fovY / 2);
  const out = new Float32Array(16);
  out[0] = f / aspect;
  out[5] = f;
  out[10] = (far + near) / (near - far);
  out[11] = -1;
  out[14] = (2 * far * near) / (near - far);
  return out;
}

function multiply(a: Float32Array, b: Float32Array): Float32Array {
  const out = new Float32Array(16);
  for (let row = 0; row < 4; row++) {
    for (let col = 0; col < 4; col++) {
      let acc = 0;
      for (let k = 0; k < 4; k++) acc += a[k * 4 + row] * b[col * 4 + k];
      out[col * 4 + row] = acc;
    }
  }
  return out;
}

function computeNormals(vertices: Float32Array, faces: Uint32Array): Float32Array {
  const normals = new Float32Array(vertices.length);
  for (let f = 0; f < faces.length; f += 3) {
    const a = faces[f] * 3, b = faces[f + 1] * 3, c = faces[f + 2] * 3;
    const e1 = [vertices[b] - vertices[a], vertices[b + 1] - vertices[a + 1], vertices[b + 2] - vertices[a + 2]];
    const e2 = [vertices[c] - vertices[a], vertices[c + 1] - vertices[a + 1], vertices[c + 2] - vertices[a + 2]];
    const nx = e1[1] * e2[2] - e1[2] * e2[1];
    const ny = e1[2] * e2[0] - e1[0] * e2[2];
    const nz = e1[0] * e2[1] - e1[1] * e2[0];
    for (const idx of [a, b, c]) {
      normals[idx] += nx;
      normals[idx + 1] += ny;
      normals[idx + 2] += nz;
    }
  }
  for (let i = 0; i < normals.length; i += 3) {
    const len = Math.hypot(normals[i], normals[i + 1], normals[i + 2]) || 1;
    normals[i] /= len;
    normals[i + 1] /= len;
    normals[i + 2] /= len;
  }
  return normals;
}

export class MeshViewer {
  private gl: WebGL2RenderingContext;
  private program: WebGLProgram;
  private buffers: { position: WebGLBuffer; normal: WebGLBuffer; color: WebGLBuffer; index: WebGLBuffer };
  private indexCount = 0;
  private vertices = new Float32Array(0);
  private faces = new Uint32Array(0);
  private center: [number, number, number] = [0, 0, 0];
  private radius = 1;
  private yaw = 0.4;
  private pitch = 0.15;
  private distance = 2.2;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2");
    if (!gl) throw new Error("WebGL2 is not available");
    this.gl = gl;
    this.program = this.compile();
    this.buffers = {
      position: gl.createBuffer()!,
      normal: gl.createBuffer()!,
      color: gl.createBuffer()!,
      index: gl.createBuffer()!,
    };
    this.bindInput();
  }

  private compile(): WebGLProgram {
    const gl = this.gl;
    const make = (kind: number, source: string) => {
      const shader = gl.createShader(kind)!;
      gl.shaderSource(shader, source);
      gl.compileShader(shader);
      if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
        throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failure");
      }
      return shader;
    };
    const program = gl.createProgram()!;
    gl.attachShader(program, make(gl.VERTEX_SHADER, VERTEX_SHADER));
    gl.attachShader(program, make(gl.FRAGMENT_SHADER, FRAGMENT_SHADER));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "program link failure");
    }
    return program;
  }

  private bindInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
      this.canvas.setPointerCapture(e.pointerId);
    });
    this.canvas.addEventListener("pointerup", () => (dragging = false));
    this.canvas.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      this.yaw += (e.clientX - lastX) * 0.008;
      this.pitch = Math.max(-1.4, Math.min(1.4, this.pitch + (e.clientY - lastY) * 0.008));
      lastX = e.clientX;
      lastY = e.clientY;
      this.render();
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.distance = Math.max(0.5, Math.min(10, this.distance * (1 + e.deltaY * 0.001)));
      this.render();
    }, { passive: false });
  }

  setMesh(vertices: number[], faces: number[]): void {
    this.vertices = Float32Array.from(vertices);
    this.faces = Uint32Array.from(faces);
    this.indexCount = faces.length;
    let minX = Infinity, minY = Infinity, minZ = Infinity;
    let maxX = -Infinity, maxY = -Infinity, maxZ = -Infinity;
    for (let i = 0; i < this.vertices.length; i += 3) {
      minX = Math.min(minX, this.vertices[i]); maxX = Math.max(maxX, this.vertices[i]);
      minY = Math.min(minY, this.vertices[i + 1]); maxY = Math.max(maxY, this.vertices[i + 1]);
      minZ = Math.min(minZ, this.vertices[i + 2]); maxZ = Math.max(maxZ, this.vertices[i + 2]);
    }
    this.center = [(minX + maxX) / 2, (minY + maxY) / 2, (minZ + maxZ) / 2];
    this.radius = Math.hypot(maxX - minX, maxY - minY, maxZ - minZ) / 2 || 1;
    const gl = this.gl;
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.buffers.index);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, this.faces, gl.STATIC_DRAW);
    this.updateVertices(vertices);
  }

  /** Update positions (and recompute normals) without touching topology. */
  updateVertices(vertices: number[]): void {
    this.vertices = Float32Array.from(vertices);
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.position);
    gl.bufferData(gl.ARRAY_BUFFER, this.vertices, gl.DYNAMIC_DRAW);
    const normals = computeNormals(this.vertices, this.faces);
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.normal);
    gl.bufferData(gl.ARRAY_BUFFER, normals, gl.DYNAMIC_DRAW);
    this.render();
  }

  setColors(colors: Float32Array): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.buffers.color);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    this.render();
  }

  render(): void {
    const gl = this.gl;
    const width = this.canvas.clientWidth || this.canvas.width;
    const height = this.canvas.clientHeight || this.canvas.height;
    if (this.canvas.width !== width || this.canvas.height !== height) {
      this.canvas.width = width;
      this.canvas.height = height;
    }
    gl.viewport(0, 0, width, height);
    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0.12, 0.13, 0.16, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    if (this.indexCount === 0) return;

    const eyeDistance = this.distance * this.radius * 1.8;
    const cosPitch = Math.cos(this.pitch);
    const eye = [
      this.center[0] + eyeDistance * cosPitch * Math.sin(this.yaw),
      this.center[1] + eyeDistance * Math.sin(this.pitch),
      this.center[2] + eyeDistance * cosPitch * Math.cos(this.yaw),
    ];
    const view = lookAt(eye as [number, number, number], this.center, [0, 1, 0]);
    const projection = perspective(0.8, width / Math.max(height, 1), 0.01 * this.radius, 100 * this.radius);
    const mvp = multiply(projection, view);
    const model = new Float32Array([1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1]);

    gl.useProgram(this.program);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "u_mvp"), false, mvp);
    gl.uniformMatrix4fv(gl.getUniformLocation(this.program, "u_model"), false, model);
    const bind = (buffer: WebGLBuffer, location: number) => {
      gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
      gl.enableVertexAttribArray(location);
      gl.vertexAttribPointer(location, 3, gl.FLOAT, false, 0, 0);
    };
    bind(this.buffers.position, 0);
    bind(this.buffers.normal, 1);
    bind(this.buffers.color, 2);
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.buffers.index);
    gl.drawElements(gl.TRIANGLES, this.indexCount, gl.UNSIGNED_INT, 0);
  }
}

function lookAt(eye: [number, number, number], center: [number, number, number], up: [number, number, number]): Float32Array {
  const f = normalize([center[0] - eye[0], center[1] - eye[1], center[2] - eye[2]]);
  const s = normalize(cross(f, up));
  const u = cross(s, f);
  return new Float32Array([
    s[0], u[0], -f[0], 0,
    s[1], u[1], -f[1], 0,
    s[2], u[2], -f[2], 0,
    -dot(s, eye), -dot(u, eye), dot(f, eye), 1,
  ]);
}

function cross(a: number[], b: number[]): number[] {
  return [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
}

function dot(a: number[], b: number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(v: number[]): number[] {
  const len = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / len, v[1] / len, v[2] / len];
}
