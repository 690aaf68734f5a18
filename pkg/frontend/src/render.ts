/** WebGL point rendering and camera controls.
 *
 * Points arrive as 16-byte records (x,y,z int32 + r,g,b,pad u8).
 * WebGL1 has no int32 vertex attributes, so records are dequantized to
 * float32 world positions on upload, keeping the 16-byte interleaved
 * stride (3 x f32 + rgba u8). Each octree node owns one GPU buffer; the
 * preview cloud is just another buffer that is deleted on the
 * Preview -> Octree switch.
 */
import { CameraState, makeCamera, right } from "./camera.js";
import { POINT_RECORD_SIZE } from "./hierarchy.js";
import { Vec3, add, cross, norm, scale, sub } from "./math.js";

const VERTEX_SHADER = `
attribute vec3 aPosition;
attribute vec3 aColor;
uniform mat4 uViewProj;
varying vec3 vColor;
void main() {
  gl_Position = uViewProj * vec4(aPosition, 1.0);
  gl_PointSize = 1.0;
  vColor = aColor / 255.0;
}
`;

const FRAGMENT_SHADER = `
precision mediump float;
varying vec3 vColor;
void main() {
  gl_FragColor = vec4(vColor, 1.0);
}
`;

export interface NodeBuffer {
  buffer: WebGLBuffer;
  pointCount: number;
  bytes: number;
}

export class PointRenderer {
  private readonly gl: WebGLRenderingContext;
  private readonly program: WebGLProgram;
  private readonly buffers = new Map<string, NodeBuffer>();
  private readonly uViewProj: WebGLUniformLocation;
  private readonly aPosition: number;
  private readonly aColor: number;
  residentBytes = 0;

  constructor(
    canvas: HTMLCanvasElement,
    private scaleVec: Vec3,
    private offsetVec: Vec3,
  ) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL unavailable");
    this.gl = gl;
    this.program = buildProgram(gl);
    this.uViewProj = gl.getUniformLocation(this.program, "uViewProj")!;
    this.aPosition = gl.getAttribLocation(this.program, "aPosition");
    this.aColor = gl.getAttribLocation(this.program, "aColor");
    gl.enable(gl.DEPTH_TEST);
  }

  setQuantization(scaleVec: Vec3, offsetVec: Vec3): void {
    this.scaleVec = scaleVec;
    this.offsetVec = offsetVec;
  }

  /** Upload one node (or the preview) from raw 16-byte records. */
  upload(name: string, payload: ArrayBuffer): void {
    this.release(name);
    const gl = this.gl;
    const buffer = gl.createBuffer();
    if (!buffer) throw new Error("buffer allocation failed");
    gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
    gl.bufferData(gl.ARRAY_BUFFER, dequantizeRecords(payload, this.scaleVec, this.offsetVec), gl.STATIC_DRAW);
    this.buffers.set(name, {
      buffer,
      pointCount: payload.byteLength / POINT_RECORD_SIZE,
      bytes: payload.byteLength,
    });
    this.residentBytes += payload.byteLength;
  }

  release(name: string): void {
    const entry = this.buffers.get(name);
    if (!entry) return;
    this.gl.deleteBuffer(entry.buffer);
    this.residentBytes -= entry.bytes;
    this.buffers.delete(name);
  }

  releaseAll(): void {
    for (const name of [...this.buffers.keys()]) this.release(name);
  }

  has(name: string): boolean {
    return this.buffers.has(name);
  }

  residentNames(): string[] {
    return [...this.buffers.keys()];
  }

  residentPoints(names?: string[]): number {
    let total = 0;
    for (const [name, entry] of this.buffers) {
      if (!names || names.includes(name)) total += entry.pointCount;
    }
    return total;
  }

  draw(cam: CameraState, names: string[]): number {
    const gl = this.gl;
    const canvas = gl.canvas as HTMLCanvasElement;
    gl.viewport(0, 0, canvas.width, canvas.height);
    gl.clearColor(0, 0, 0, 1);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.useProgram(this.program);
    gl.uniformMatrix4fv(this.uViewProj, false, viewProjection(cam));
    let drawn = 0;
    for (const name of names) {
      const entry = this.buffers.get(name);
      if (!entry) continue;
      gl.bindBuffer(gl.ARRAY_BUFFER, entry.buffer);
      gl.enableVertexAttribArray(this.aPosition);
      gl.vertexAttribPointer(this.aPosition, 3, gl.FLOAT, false, POINT_RECORD_SIZE, 0);
      gl.enableVertexAttribArray(this.aColor);
      gl.vertexAttribPointer(this.aColor, 3, gl.UNSIGNED_BYTE, false, POINT_RECORD_SIZE, 12);
      gl.drawArrays(gl.POINTS, 0, entry.pointCount);
      drawn += entry.pointCount;
    }
    return drawn;
  }
}

/** Rewrite int32 quantized positions as float32 world positions in place
 * of the position lanes, preserving the 16-byte stride and color bytes. */
export function dequantizeRecords(payload: ArrayBuffer, scaleVec: Vec3, offsetVec: Vec3): ArrayBuffer {
  const n = payload.byteLength / POINT_RECORD_SIZE;
  const out = payload.slice(0);
  const src = new DataView(payload);
  const dst = new DataView(out);
  for (let i = 0; i < n; i++) {
    const off = i * POINT_RECORD_SIZE;
    for (let axis = 0; axis < 3; axis++) {
      const q = src.getInt32(off + axis * 4, true);
      dst.setFloat32(off + axis * 4, offsetVec[axis] + q * scaleVec[axis], true);
    }
  }
  return out;
}

function buildProgram(gl: WebGLRenderingContext): WebGLProgram {
  const vs = compile(gl, gl.VERTEX_SHADER, VERTEX_SHADER);
  const fs = compile(gl, gl.FRAGMENT_SHADER, FRAGMENT_SHADER);
  const program = gl.createProgram();
  if (!program) throw new Error("program allocation failed");
  gl.attachShader(program, vs);
  gl.attachShader(program, fs);
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
  }
  return program;
}

function compile(gl: WebGLRenderingContext, kind: number, source: string): WebGLShader {
  const shader = gl.createShader(kind);
  if (!shader) throw new Error("shader allocation failed");
  gl.shaderSource(shader, source);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(gl.getShaderInfoLog(shader) ?? "compile failed");
  }
  return shader;
}

/** Column-major view-projection matrix for the camera model. */
export function viewProjection(cam: CameraState): Float32Array {
  const r = right(cam);
  const u = cam.up;
  const f = cam.forward;
  const p = cam.position;
  const th = Math.tan(cam.verticalFovRadians / 2);
  const sx = 1 / (th * cam.aspect);
  const sy = 1 / th;
  const n = cam.nearPlane;
  const fp = cam.farPlane;
  const a = (fp + n) / (fp - n);
  const b = (-2 * fp * n) / (fp - n);
  // view: rows r,u,f translated by -p; projection maps z in [n,f] to clip
  const tx = -(r[0] * p[0] + r[1] * p[1] + r[2] * p[2]);
  const ty = -(u[0] * p[0] + u[1] * p[1] + u[2] * p[2]);
  const tz = -(f[0] * p[0] + f[1] * p[1] + f[2] * p[2]);
  return new Float32Array([
    sx * r[0], sy * u[0], a * f[0], f[0],
    sx * r[1], sy * u[1], a * f[1], f[1],
    sx * r[2], sy * u[2], a * f[2], f[2],
    sx * tx, sy * ty, a * tz + b, tz,
  ]);
}

export type ControlMode = "orbit" | "fly";

/** Orbit (default) and fly camera controls with a re-plan debounce. */
export class CameraControls {
  mode: ControlMode = "orbit";
  target: Vec3;
  distance: number;
  yaw = 0;
  pitch = 0;
  fovDegrees = 60;
  static readonly REST_DEBOUNCE_MS = 120;
  private restTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    target: Vec3,
    distance: number,
    private readonly canvas: HTMLCanvasElement,
    private readonly onRest: (cam: CameraState) => void,
  ) {
    this.target = target;
    this.distance = distance;
    this.attach();
  }

  camera(): CameraState {
    const cy = Math.cos(this.yaw);
    const sy = Math.sin(this.yaw);
    const cp = Math.cos(this.pitch);
    const sp = Math.sin(this.pitch);
    const back: Vec3 = [cp * sy, sp, cp * cy];
    const position = add(this.target, scale(back, this.distance));
    let forward = sub(this.target, position);
    if (norm(forward) === 0) forward = [0, 0, -1];
    const up: Vec3 = Math.abs(sp) > 0.99 ? [0, 0, -Math.sign(sp)] : [0, 1, 0];
    return makeCamera({
      position,
      forward,
      up,
      verticalFovRadians: (this.fovDegrees * Math.PI) / 180,
      aspect: this.canvas.width / this.canvas.height,
      screenHeightPixels: this.canvas.height,
    });
  }

  /** Any movement schedules a plan for 120 ms after the camera rests. */
  private moved(): void {
    if (this.restTimer !== null) clearTimeout(this.restTimer);
    this.restTimer = setTimeout(() => {
      this.restTimer = null;
      this.onRest(this.camera());
    }, CameraControls.REST_DEBOUNCE_MS);
  }

  private attach(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("mousedown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
    });
    window.addEventListener("mouseup", () => (dragging = false));
    window.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      const dx = e.clientX - lastX;
      const dy = e.clientY - lastY;
      lastX = e.clientX;
      lastY = e.clientY;
      this.yaw -= dx * 0.005;
      this.pitch = Math.min(1.55, Math.max(-1.55, this.pitch - dy * 0.005));
      this.moved();
    });
    this.canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.distance *= Math.exp(e.deltaY * 0.001);
      this.moved();
    });
    window.addEventListener("keydown", (e) => {
      if (e.key === "f") {
        this.mode = this.mode === "orbit" ? "fly" : "orbit";
        return;
      }
      if (this.mode !== "fly") return;
      const cam = this.camera();
      const step = this.distance * 0.05;
      const moves: Record<string, Vec3> = {
        w: scale(cam.forward, step),
        s: scale(cam.forward, -step),
        a: scale(cross(cam.up, cam.forward), step),
        d: scale(cross(cam.up, cam.forward), -step),
      };
      const delta = moves[e.key];
      if (delta) {
        this.target = add(this.target, delta);
        this.moved();
      }
    });
  }
}
