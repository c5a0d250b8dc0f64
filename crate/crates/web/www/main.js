import init, { ToySimulation } from "./pkg/cyclab_web.js";

const $ = (id) => document.getElementById(id);
let sim = null;

function frame(ctx, xs, ys) {
  const finite = (v) => v.filter(Number.isFinite);
  const range = (v) => {
    const f = finite(v);
    let lo = Math.min(...f), hi = Math.max(...f);
    if (!f.length) return [0, 1];
    if (hi === lo) { lo -= 0.5; hi += 0.5; }
    return [lo, hi];
  };
  const [x0, x1] = range(xs), [y0, y1] = range(ys);
  const { width: w, height: h } = ctx.canvas, m = 30;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#000";
  ctx.strokeRect(m, m / 2, w - 1.5 * m, h - 1.5 * m);
  ctx.fillStyle = "#444";
  ctx.font = "10px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, m / 2 + 8);
  ctx.fillText(y0.toPrecision(3), 2, h - m);
  return {
    px: (x) => m + ((x - x0) / (x1 - x0)) * (w - 1.5 * m),
    py: (y) => h - m - ((y - y0) / (y1 - y0)) * (h - 1.5 * m),
    top: m / 2,
    bottom: h - m,
  };
}

function line(ctx, f, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  let started = false;
  xs.forEach((x, i) => {
    if (!Number.isFinite(ys[i])) { started = false; return; }
    started ? ctx.lineTo(f.px(x), f.py(ys[i])) : ctx.moveTo(f.px(x), f.py(ys[i]));
    started = true;
  });
  ctx.stroke();
}

function drawCurve(curve, tasks) {
  const ctx = $("curve").getContext("2d");
  const xs = curve.map((_, k) => k);
  const f = frame(ctx, xs, curve);
  ctx.setLineDash([4, 3]);
  ctx.strokeStyle = "#888";
  for (let k = tasks; k < curve.length; k += tasks) {
    ctx.beginPath();
    ctx.moveTo(f.px(k), f.top);
    ctx.lineTo(f.px(k), f.bottom);
    ctx.stroke();
  }
  ctx.setLineDash([]);
  line(ctx, f, xs, curve, "#1f77b4");
}

function drawRecovery(scores) {
  const ctx = $("recovery").getContext("2d");
  const xs = scores.map((_, i) => i + 1);
  const f = frame(ctx, xs, [0, ...scores]);
  line(ctx, f, xs, scores, "#d62728");
}

function drawLayout(epoch) {
  $("epoch-label").textContent = epoch;
  const coords = sim.layout(epoch);
  const xs = [], ys = [];
  for (let i = 0; i < coords.length; i += 2) { xs.push(coords[i]); ys.push(coords[i + 1]); }
  const ctx = $("layout").getContext("2d");
  const f = frame(ctx, xs, ys);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(f.px(x), f.py(ys[i])) : ctx.moveTo(f.px(x), f.py(ys[i]))));
  ctx.closePath();
  ctx.stroke();
  xs.forEach((x, i) => {
    const t = i / Math.max(xs.length - 1, 1);
    ctx.fillStyle = `hsl(${Math.round(300 * t)}, 70%, 45%)`;
    ctx.beginPath();
    ctx.arc(f.px(x), f.py(ys[i]), 4, 0, 2 * Math.PI);
    ctx.fill();
  });
  const c = sim.circularOrder(epoch);
  ctx.fillStyle = "#222";
  ctx.fillText(c === undefined ? "circular order: n/a" : `circular order: ${c.toFixed(3)}`, 40, 12);
}

function simulate() {
  const tasks = +$("tasks").value;
  $("status").textContent = "running...";
  setTimeout(() => {
    try {
      sim?.free();
      const t0 = performance.now();
      sim = new ToySimulation($("family").value, +$("n").value, tasks, +$("epochs").value, +$("seed").value, $("normalized").checked);
      const ms = Math.round(performance.now() - t0);
      const diverged = sim.divergedAt;
      $("status").textContent = diverged === undefined
        ? `${sim.epochs} epochs in ${ms} ms`
        : `diverged at episode ${diverged}; showing ${sim.epochs} complete epochs`;
      $("epoch").max = sim.epochs;
      $("epoch").value = sim.epochs;
      if (sim.epochs >= 2) {
        drawCurve(sim.alignedCurve(), tasks);
        drawRecovery(sim.recoveryScores());
      }
      drawLayout(sim.epochs);
    } catch (e) {
      $("status").textContent = `error: ${e.message ?? e}`;
    }
  }, 10);
}

await init();
$("run").addEventListener("click", simulate);
$("epoch").addEventListener("input", (e) => sim && drawLayout(+e.target.value));
simulate();
