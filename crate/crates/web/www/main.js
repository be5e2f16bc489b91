import init, { mesh_view, preconditioned_spectrum, solve } from "./pkg/subdiff_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function clear(ctx) {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
}

function drawMesh() {
  const r = num("mesh-r");
  $("mesh-r-val").textContent = r;
  const ctx = $("mesh-canvas").getContext("2d");
  clear(ctx);
  let view;
  try {
    view = mesh_view(num("mesh-beta"), r, num("mesh-m"));
  } catch (e) {
    $("mesh-out").textContent = e.message;
    return;
  }
  const W = ctx.canvas.width, pad = 30, w = W - 2 * pad;
  const pts = view.points, m0 = view.m0;
  // mesh points on [0, 1]
  ctx.strokeStyle = "#999";
  ctx.beginPath(); ctx.moveTo(pad, 40); ctx.lineTo(pad + w, 40); ctx.stroke();
  pts.forEach((t, k) => {
    ctx.strokeStyle = k <= m0 ? "#c0392b" : "#2c3e50";
    ctx.beginPath(); ctx.moveTo(pad + t * w, 30); ctx.lineTo(pad + t * w, 50); ctx.stroke();
  });
  // sub-diagonal magnitudes, log scale
  const d = view.decay;
  const logs = Array.from(d, (v) => Math.log10(Math.max(v, 1e-300)));
  const hi = Math.max(...logs), lo = Math.min(...logs);
  const top = 80, h = ctx.canvas.height - top - 20, bw = w / d.length;
  ctx.fillStyle = "#2980b9";
  logs.forEach((v, i) => {
    const bh = hi > lo ? ((v - lo) / (hi - lo)) * h * 0.95 + h * 0.05 : h;
    ctx.fillRect(pad + i * bw, top + h - bh, Math.max(bw - 1, 1), bh);
  });
  $("mesh-out").textContent =
    `M0 = ${m0} graded steps (red), ${pts.length - 1 - m0} uniform; ` +
    `largest |A11| per sub-diagonal spans 1e${lo.toFixed(1)} .. 1e${hi.toFixed(1)} (bars, log scale)`;
}

function drawSpectrum() {
  const alpha = 10 ** num("sp-alpha");
  $("sp-alpha-val").textContent = alpha.toExponential(1);
  const ctx = $("sp-canvas").getContext("2d");
  clear(ctx);
  let z;
  try {
    z = preconditioned_spectrum(num("sp-beta"), 2, num("sp-m"), num("sp-n"), alpha);
  } catch (e) {
    $("sp-out").textContent = e.message;
    return;
  }
  let rad = 1e-12;
  for (let i = 0; i < z.length; i += 2) rad = Math.max(rad, Math.hypot(z[i] - 1, z[i + 1]));
  const W = ctx.canvas.width, H = ctx.canvas.height, s = (0.45 * H) / rad;
  const cx = W / 2, cy = H / 2;
  ctx.strokeStyle = "#bbb";
  ctx.beginPath(); ctx.moveTo(0, cy); ctx.lineTo(W, cy); ctx.moveTo(cx, 0); ctx.lineTo(cx, H); ctx.stroke();
  ctx.fillStyle = "#8e44ad";
  for (let i = 0; i < z.length; i += 2) {
    ctx.beginPath();
    ctx.arc(cx + (z[i] - 1) * s, cy - z[i + 1] * s, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
  $("sp-out").textContent =
    `${z.length / 2} eigenvalues centred on 1; max |lambda - 1| = ${rad.toExponential(3)}`;
}

function colour(v) {
  // blue -> white -> red
  const t = Math.min(Math.max(v, 0), 1);
  const r = t < 0.5 ? 2 * t : 1, b = t < 0.5 ? 1 : 2 - 2 * t, g = 1 - Math.abs(2 * t - 1);
  return `rgb(${(255 * r) | 0},${(255 * g) | 0},${(255 * b) | 0})`;
}

function runSolve() {
  const ctx = $("sv-canvas").getContext("2d");
  clear(ctx);
  $("sv-out").textContent = "solving...";
  // let the status paint before the synchronous solve
  setTimeout(() => {
    const t0 = performance.now();
    let res;
    try {
      res = solve($("sv-problem").value, $("sv-method").value, num("sv-beta"), 2, num("sv-m"), num("sv-n"));
    } catch (e) {
      $("sv-out").textContent = e.message;
      return;
    }
    const ms = performance.now() - t0;
    const f = res.field, n = res.side;
    let lo = Infinity, hi = -Infinity;
    for (const v of f) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
    const cell = ctx.canvas.width / n;
    for (let j = 0; j < n; j++) {
      for (let i = 0; i < n; i++) {
        ctx.fillStyle = colour(hi > lo ? (f[j * n + i] - lo) / (hi - lo) : 0.5);
        // y grows upwards
        ctx.fillRect(i * cell, (n - 1 - j) * cell, Math.ceil(cell), Math.ceil(cell));
      }
    }
    const it = Array.from(res.iterations, (x) => +x.toFixed(2));
    const label = it.length === 4 ? `outer (${it[0]}, ${it[1]}), inner (${it[2]}, ${it[3]})`
      : it.length === 2 ? `Krylov (${it[0]}, ${it[1]})`
      : it.length === 1 ? `Newton steps per time step ${it[0]}` : "direct stepping";
    const err = res.error === undefined ? "" : `, error at T = ${res.error.toExponential(3)}`;
    $("sv-out").textContent =
      `${res.converged ? "converged" : "NOT converged"}: ${label}${err}; ` +
      `u(T) in [${lo.toFixed(3)}, ${hi.toFixed(3)}]; ${ms.toFixed(0)} ms`;
  }, 10);
}

await init();
for (const id of ["mesh-beta", "mesh-r", "mesh-m"]) $(id).addEventListener("input", drawMesh);
for (const id of ["sp-beta", "sp-m", "sp-n", "sp-alpha"]) $(id).addEventListener("input", drawSpectrum);
$("sv-run").addEventListener("click", runSolve);
drawMesh();
drawSpectrum();
runSolve();
