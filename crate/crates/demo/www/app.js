import init, { run_length_explorer, roc_sweep_demo, missingness_viewer } from "./pkg/vqprofile_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function status(id, text, error = false) {
  const el = $(id);
  el.textContent = text;
  el.classList.toggle("error", error);
}

function attempt(statusId, f) {
  try {
    f();
  } catch (e) {
    status(statusId, String(e), true);
  }
}

function drawHeatmap(canvas, view) {
  const ctx = canvas.getContext("2d");
  const T = view.posterior.length;
  const R = Math.max(...view.posterior.map((r) => r.length));
  const cw = canvas.width / T;
  const ch = canvas.height / R;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  view.posterior.forEach((row, t) => {
    row.forEach((p, r) => {
      const shade = Math.round(255 * (1 - Math.min(1, Math.pow(p, 0.4))));
      ctx.fillStyle = `rgb(${shade},${shade},255)`;
      ctx.fillRect(t * cw, canvas.height - (r + 1) * ch, cw + 0.5, ch + 0.5);
    });
  });
  ctx.strokeStyle = "#d33";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  view.map.forEach((r, t) => {
    const x = (t + 0.5) * cw;
    const y = canvas.height - (Math.min(r, R - 1) + 0.5) * ch;
    t === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.strokeStyle = "#0a0";
  view.change_points.forEach((c) => {
    ctx.beginPath();
    ctx.moveTo(c * cw, 0);
    ctx.lineTo(c * cw, canvas.height);
    ctx.stroke();
  });
}

function drawSeries(canvas, values) {
  const ctx = canvas.getContext("2d");
  const finite = values.filter(Number.isFinite);
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#333";
  ctx.beginPath();
  values.forEach((v, t) => {
    const x = ((t + 0.5) / values.length) * canvas.width;
    const y = canvas.height - 4 - ((v - lo) / span) * (canvas.height - 8);
    t === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
}

function explorer() {
  attempt("rl-status", () => {
    const view = JSON.parse(
      run_length_explorer($("rl-text").value, num("rl-seed"), num("rl-lambda"), num("rl-alpha"), $("rl-alarm").value, num("rl-window")),
    );
    drawHeatmap($("rl-heat"), view);
    drawSeries($("rl-score"), view.scores);
    status("rl-status", `${view.ids.length} days, log evidence ${view.ln_evidence.toFixed(2)}; red line is the MAP run length, lower panel the alarm score`);
  });
}

function roc() {
  attempt("roc-status", () => {
    const view = JSON.parse(
      roc_sweep_demo(num("roc-seed"), num("roc-n"), num("roc-lambda"), $("roc-alarm").value, num("roc-window"), num("roc-lag")),
    );
    const c = $("roc-plot");
    const ctx = c.getContext("2d");
    const pad = 30;
    const s = c.width - 2 * pad;
    ctx.clearRect(0, 0, c.width, c.height);
    ctx.strokeStyle = "#bbb";
    ctx.strokeRect(pad, pad, s, s);
    ctx.beginPath();
    ctx.moveTo(pad, pad + s);
    ctx.lineTo(pad + s, pad);
    ctx.stroke();
    ctx.strokeStyle = "#15c";
    ctx.lineWidth = 2;
    ctx.beginPath();
    view.fpr.forEach((f, i) => {
      const x = pad + f * s;
      const y = pad + s - view.sensitivity[i] * s;
      i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
    });
    ctx.stroke();
    ctx.lineWidth = 1;
    ctx.fillStyle = "#333";
    ctx.fillText("false positive rate", pad + s / 2 - 40, c.height - 8);
    ctx.fillText("sensitivity", 2, pad - 8);
    status("roc-status", `${view.method}, W=${view.window}: AUC ${view.auc.toFixed(3)} over ${view.events} events`);
  });
}

const COLORS = { 0: "#ddd", 1: "#345", 2: "#f80" };

function drawMask(canvas, grid, names) {
  const ctx = canvas.getContext("2d");
  const left = 120;
  const rows = grid.length;
  const days = grid[0].length;
  const cw = (canvas.width - left) / days;
  const ch = canvas.height / rows;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  grid.forEach((row, f) => {
    ctx.fillStyle = "#333";
    ctx.fillText(names[f], 2, f * ch + ch * 0.7);
    row.forEach((code, t) => {
      ctx.fillStyle = COLORS[code];
      ctx.fillRect(left + t * cw, f * ch + 1, Math.max(1, cw - 0.5), ch - 2);
    });
  });
}

function hiddenShare(orig, grid) {
  let observed = 0;
  let hidden = 0;
  orig.forEach((row, f) =>
    row.forEach((c, t) => {
      if (c === 1) {
        observed += 1;
        if (grid[f][t] === 2) hidden += 1;
      }
    }),
  );
  return observed ? hidden / observed : 0;
}

function viewer() {
  attempt("mv-status", () => {
    const view = JSON.parse(missingness_viewer(num("mv-seed"), num("mv-days"), num("mv-rate")));
    drawMask($("mv-mcar"), view.mcar, view.variables);
    drawMask($("mv-mnar"), view.mnar, view.variables);
    status(
      "mv-status",
      `hidden share of observed entries: MCAR ${(100 * hiddenShare(view.original, view.mcar)).toFixed(1)}%, MNAR ${(100 * hiddenShare(view.original, view.mnar)).toFixed(1)}%`,
    );
  });
}

await init();
$("rl-run").addEventListener("click", explorer);
$("roc-run").addEventListener("click", roc);
$("mv-run").addEventListener("click", viewer);
$("mv-rate").addEventListener("input", () => {
  $("mv-rate-val").textContent = Number($("mv-rate").value).toFixed(2);
  viewer();
});
explorer();
roc();
viewer();
