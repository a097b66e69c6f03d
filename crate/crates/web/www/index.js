// Built with `wasm-pack build crates/web --target web --out-dir www/pkg`.
import init, { checkExpression, scenarioTruth, auditShift } from "./pkg/causalmix_web.js";

const $ = (id) => document.getElementById(id);

function show(id, fn) {
  const out = $(id);
  out.classList.remove("err");
  try {
    const value = JSON.parse(fn());
    out.textContent = JSON.stringify(value, (k, v) => (k === "embedding" || k === "tau_histogram" ? undefined : v), 2);
    return value;
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
    return null;
  }
}

function drawHistogram(canvas, hist) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const max = Math.max(...hist.counts, 1);
  const w = canvas.width / hist.counts.length;
  ctx.fillStyle = "#4a78b5";
  hist.counts.forEach((c, i) => {
    const h = (c / max) * (canvas.height - 20);
    ctx.fillRect(i * w + 1, canvas.height - h, w - 2, h);
  });
  ctx.fillStyle = "#222";
  ctx.fillText(hist.low.toFixed(3), 2, 12);
  const hi = hist.low + hist.width * hist.counts.length;
  ctx.fillText(hi.toFixed(3), canvas.width - 40, 12);
}

function drawEmbedding(canvas, points) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  const pad = 10;
  const sx = (canvas.width - 2 * pad) / (x1 - x0 || 1);
  const sy = (canvas.height - 2 * pad) / (y1 - y0 || 1);
  for (const [x, y, synth] of points) {
    ctx.fillStyle = synth ? "rgba(230,126,34,.7)" : "rgba(52,101,164,.7)";
    ctx.beginPath();
    ctx.arc(pad + (x - x0) * sx, canvas.height - pad - (y - y0) * sy, 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }
}

await init();

$("check").onclick = () => show("check-out", () => checkExpression($("expr").value, $("role").value));

$("truth").onclick = () => {
  const v = show("truth-out", () =>
    scenarioTruth($("tau").value, $("kappa").value, $("log-alpha").value, Number($("truth-n").value), 7));
  if (v) drawHistogram($("tau-hist"), v.tau_histogram);
};

$("shift").oninput = () => ($("shift-val").textContent = $("shift").value);
$("audit").onclick = () => {
  const v = show("audit-out", () => auditShift(Number($("shift").value), 600, 1));
  if (v) drawEmbedding($("embed"), v.embedding);
};
