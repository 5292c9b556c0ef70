// Glue generated by `wasm-bindgen --target web --out-dir www/pkg`.
import init, { Demo, windowOffsets, trainerCurves } from "./pkg/seisal_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const ORIENTATIONS = ["full", "axis-t", "axis-x", "axis-y", "diag-tx", "diag-ty", "diag-xy"];
const LAYERS = [
  ["input", "input"], ["mask", "mask"], ["saliency", "fused saliency"],
  ["s_t", "S t"], ["s_x", "S x"], ["s_y", "S y"],
];
const SCALE = 4;

let demo = null;

function status(text, isError = false) {
  $("status").textContent = text;
  $("status").className = isError ? "err" : "";
}

function guard(fn) {
  return (...args) => {
    try {
      fn(...args);
    } catch (e) {
      status(String(e.message ?? e), true);
    }
  };
}

function blit(canvas, rgba, w, h, scale) {
  canvas.width = w * scale;
  canvas.height = h * scale;
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function drawSlices() {
  if (!demo) return;
  const axis = $("axis").value;
  const side = demo.side();
  $("index").max = side - 1;
  const index = Math.min(num("index"), side - 1);
  $("indexOut").textContent = index;
  const box = $("slices");
  box.replaceChildren();
  for (const [layer, title] of LAYERS) {
    // rows run along t for x and y slices
    const rgba = demo.slice(layer, axis, index);
    const fig = document.createElement("figure");
    const canvas = document.createElement("canvas");
    blit(canvas, rgba, side, side, SCALE);
    const cap = document.createElement("figcaption");
    cap.textContent = title;
    fig.append(canvas, cap);
    box.append(fig);
  }
}

function runPipeline() {
  const t0 = performance.now();
  demo?.free();
  demo = new Demo($("scenario").value, num("side"), num("noise"), BigInt(num("seed")));
  demo.run(
    num("cube"), num("stride"), $("orientation").value, num("radius"),
    num("sigma"), $("weighting").value, $("fusion").value,
  );
  const ms = performance.now() - t0;
  const [auc, contrast, inside, outside] = demo.detection();
  const w = demo.weights().map((x) => x.toFixed(3)).join(", ");
  $("metrics").textContent =
    `weights [${w}]   AUC ${auc.toFixed(4)}   contrast ${contrast.toFixed(3)} ` +
    `(mask ${inside.toFixed(3)} / rest ${outside.toFixed(3)})   ${ms.toFixed(0)} ms`;
  status("Ready.");
  drawSlices();
}

function drawWindow() {
  const r = num("wRadius");
  const quads = windowOffsets($("wOrientation").value, r, num("wSigma"));
  const n = 2 * r + 1;
  const planes = [
    ["t-x plane", (dt, dx, dy) => dy === 0, (dt, dx) => [dx, dt]],
    ["t-y plane", (dt, dx, dy) => dx === 0, (dt, dx, dy) => [dy, dt]],
    ["x-y plane", (dt) => dt === 0, (dt, dx, dy) => [dx, dy]],
  ];
  const box = $("window");
  box.replaceChildren();
  for (const [title, keep, place] of planes) {
    const rgba = new Uint8Array(n * n * 4);
    for (let i = 0; i < n * n; i++) rgba.set([40, 40, 60, 255], 4 * i);
    rgba.set([220, 60, 60, 255], 4 * (r * n + r));
    for (let i = 0; i < quads.length; i += 4) {
      const [dt, dx, dy, w] = quads.slice(i, i + 4);
      if (!keep(dt, dx, dy)) continue;
      const [c, row] = place(dt, dx, dy).map((v) => v + r);
      const g = Math.round(255 * w);
      rgba.set([g, g, g, 255], 4 * (row * n + c));
    }
    const fig = document.createElement("figure");
    const canvas = document.createElement("canvas");
    blit(canvas, rgba, n, n, Math.floor(120 / n));
    const cap = document.createElement("figcaption");
    cap.textContent = title;
    fig.append(canvas, cap);
    box.append(fig);
  }
  const count = quads.length / 4;
  let total = 0;
  for (let i = 3; i < quads.length; i += 4) total += quads[i];
  $("windowInfo").textContent = `${count} offsets, total weight ${total.toFixed(4)} (red: center voxel)`;
}

function drawCurves() {
  const curves = trainerCurves(
    num("len"), BigInt(num("cSeed")), num("lmsMu"), num("nlmsMu"), num("lambda"), num("delta"),
  );
  const colors = ["#d62728", "#1f77b4", "#2ca02c"];
  const series = [0, 1, 2].map((i) => curves.mse(i));
  const canvas = $("curves");
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, pad = 40;
  ctx.clearRect(0, 0, W, H);
  const logs = series.flat().filter((v) => v > 0).map(Math.log10);
  const lo = Math.floor(Math.min(...logs, -12)), hi = Math.ceil(Math.max(...logs, 0));
  const points = Math.max(...series.map((s) => s.length), 2);
  const x = (i) => pad + ((W - 2 * pad) * i) / (points - 1);
  const y = (v) => H - pad - ((H - 2 * pad) * (Math.log10(Math.max(v, 10 ** lo)) - lo)) / (hi - lo);
  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.strokeRect(pad, pad, W - 2 * pad, H - 2 * pad);
  for (let e = lo; e <= hi; e += Math.max(1, Math.round((hi - lo) / 6))) {
    ctx.fillText(`1e${e}`, 2, y(10 ** e) + 4);
  }
  ctx.fillText(`block of ${curves.window()} samples`, W / 2 - 50, H - 10);
  const lines = [];
  series.forEach((s, k) => {
    ctx.strokeStyle = colors[k];
    ctx.beginPath();
    s.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
    ctx.stroke();
    ctx.fillStyle = colors[k];
    ctx.fillText(curves.name(k), W - pad - 40, pad + 14 * (k + 1));
    const n = curves.toThreshold(k);
    lines.push(`${curves.name(k).padEnd(5)} samples to MSE 1e-6: ${n < 0 ? "not reached" : n}`);
  });
  curves.free();
  $("curveInfo").textContent = lines.join("\n");
}

for (const sel of document.querySelectorAll("select.orient")) {
  for (const o of ORIENTATIONS) sel.add(new Option(o));
}

await init();
status("Ready.");
$("run").onclick = guard(runPipeline);
$("axis").onchange = guard(drawSlices);
$("index").oninput = guard(drawSlices);
for (const id of ["wOrientation", "wRadius", "wSigma"]) $(id).oninput = guard(drawWindow);
$("train").onclick = guard(drawCurves);
guard(runPipeline)();
guard(drawWindow)();
guard(drawCurves)();
