import init, { flowPair, apexCurve, sweepScores } from "./pkg/microatt_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function show(canvas, pic, scale) {
  canvas.width = pic.width * scale;
  canvas.height = pic.height * scale;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(pic.width, pic.height);
  pic.pixels.forEach((v, i) => {
    img.data.set([v, v, v, 255], 4 * i);
  });
  const tmp = new OffscreenCanvas(pic.width, pic.height);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

// series: [{ points: [[x, y]], color }], marks: [{ x, color }]
function chart(canvas, series, marks = []) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const all = series.flatMap((s) => s.points);
  const xs = all.map((p) => p[0]), ys = all.map((p) => p[1]);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const y1 = Math.max(...ys) || 1;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - (y / y1) * (h - 2 * pad);
  ctx.strokeStyle = "#888";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(x0.toFixed(2), pad, h - pad + 14);
  ctx.fillText(x1.toFixed(2), w - pad - 24, h - pad + 14);
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  for (const m of marks) {
    ctx.strokeStyle = m.color;
    ctx.beginPath();
    ctx.moveTo(px(m.x), pad);
    ctx.lineTo(px(m.x), h - pad);
    ctx.stroke();
  }
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.beginPath();
    s.points.forEach(([x, y], i) => (i ? ctx.lineTo(px(x), py(y)) : ctx.moveTo(px(x), py(y))));
    ctx.stroke();
  }
}

function guarded(out, f) {
  return () => {
    out.classList.remove("err");
    try {
      f();
    } catch (e) {
      out.classList.add("err");
      out.textContent = String(e);
    }
  };
}

function runFlow() {
  const d = JSON.parse(flowPair(num("flow-dx"), num("flow-dy"), num("flow-side"), num("flow-seed")));
  const scale = d.prev.width <= 64 ? 3 : 2;
  show($("flow-prev"), d.prev, scale);
  show($("flow-next"), d.next, scale);
  show($("flow-mag"), d.magnitude, scale);
  $("flow-out").textContent =
    `mean flow (${d.mean_u.toFixed(3)}, ${d.mean_v.toFixed(3)}) px, endpoint error ${d.endpoint_error.toFixed(3)} px`;
}

function runApex() {
  const d = JSON.parse(apexCurve(num("apex-class"), num("apex-peak"), num("apex-frames"), num("apex-seed")));
  const top = Math.max(...d.intensities) || 1;
  const amp = Math.max(...d.amplitudes) || 1;
  chart(
    $("apex-chart"),
    [
      { points: d.intensities.map((v, i) => [i + 1, v / top]), color: "#c03" },
      { points: d.amplitudes.map((v, t) => [t, v / amp]), color: "#36c" },
    ],
    [{ x: d.true_apex, color: "#aaa" }],
  );
  show($("apex-onset"), d.onset, 2);
  show($("apex-frame"), d.apex_frame, 2);
  show($("apex-motion"), d.motion, 2);
  $("apex-out").textContent =
    `detected apex ${d.apex}, generator apex ${d.true_apex}` +
    (d.low_confidence ? " (low confidence)" : "") +
    "\nred: motion intensity, blue: motif amplitude (both scaled to 1)";
}

function example() {
  const lines = [];
  for (let s = 0; s < 30; s++) {
    const labels = [0, 0, 0, 0, 0];
    labels[Math.floor(Math.random() * 5)] = 1;
    if (Math.random() < 0.2) labels[Math.floor(Math.random() * 5)] = 1;
    const p = labels.map((l) => Math.min(1, Math.max(0, (l ? 0.35 : 0.08) + (Math.random() - 0.5) * 0.3)));
    lines.push(p.map((v) => v.toFixed(3)).join(" ") + "  " + labels.join(" "));
  }
  $("sweep-text").value = lines.join("\n");
}

function runSweep() {
  const d = JSON.parse(sweepScores($("sweep-text").value));
  chart($("sweep-chart"), [{ points: d.curve, color: "#c03" }], [{ x: d.best_theta, color: "#36c" }]);
  $("sweep-out").textContent =
    `${d.sequences} sequences, best threshold ${d.best_theta.toFixed(2)} with UF1 ${d.best_uf1.toFixed(4)}`;
}

await init();
$("flow-run").onclick = guarded($("flow-out"), runFlow);
$("apex-run").onclick = guarded($("apex-out"), runApex);
$("sweep-run").onclick = guarded($("sweep-out"), runSweep);
$("sweep-example").onclick = () => {
  example();
  guarded($("sweep-out"), runSweep)();
};
example();
guarded($("flow-out"), runFlow)();
guarded($("apex-out"), runApex)();
guarded($("sweep-out"), runSweep)();
