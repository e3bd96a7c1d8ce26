import init, { allocationTable, chainTrace, levelDecay } from "./pkg/mlsa_wasm.js";

const field = (form, name) => form.querySelector(`[name=${name}]`);
const num = (form, name) => Number(field(form, name).value);

function fraction(text) {
  const [a, b] = text.split("/").map(Number);
  return b === undefined ? a : a / b;
}

function table(headers, rows) {
  const head = headers.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${head}</tr>${body}</table>`;
}

function guard(form, fn) {
  const out = form.querySelector(".out");
  return () => {
    try {
      out.innerHTML = fn();
    } catch (e) {
      out.innerHTML = `<p class="error">${e.message ?? e}</p>`;
    }
  };
}

function plot(canvas, points, truth) {
  const ctx = canvas.getContext("2d");
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const values = points.flatMap((p) => [p.xi, p.chi]).concat([truth.xi, truth.chi]);
  const lo = Math.min(...values), hi = Math.max(...values);
  const last = points[points.length - 1].step;
  const x = (s) => 40 + (width - 50) * (s / last);
  const y = (v) => height - 20 - (height - 30) * ((v - lo) / (hi - lo || 1));
  const line = (key, colour, dashed) => {
    ctx.strokeStyle = colour;
    ctx.setLineDash(dashed ? [5, 4] : []);
    ctx.beginPath();
    if (dashed) {
      ctx.moveTo(x(0), y(truth[key]));
      ctx.lineTo(x(last), y(truth[key]));
    } else {
      points.forEach((p, i) => (i ? ctx.lineTo(x(p.step), y(p[key])) : ctx.moveTo(x(p.step), y(p[key]))));
    }
    ctx.stroke();
  };
  line("xi", "#1f77b4", false);
  line("chi", "#d62728", false);
  line("xi", "#1f77b4", true);
  line("chi", "#d62728", true);
  ctx.setLineDash([]);
  ctx.fillStyle = "#444";
  ctx.fillText(hi.toFixed(3), 2, 12);
  ctx.fillText(lo.toFixed(3), 2, height - 22);
}

await init();

const alloc = document.getElementById("alloc");
alloc.querySelector("button").onclick = guard(alloc, () => {
  const res = JSON.parse(
    allocationTable(
      fraction(field(alloc, "epsilon").value),
      num(alloc, "k0"),
      num(alloc, "m"),
      field(alloc, "target").value,
      num(alloc, "pstar"),
      num(alloc, "gamma1"),
      num(alloc, "calibration"),
    ),
  );
  const rows = res.rows.map((r) => [r.level, r.h.toPrecision(4), r.iterations, r.cost_share.toFixed(3)]);
  const notes = res.warnings.map((w) => `<p class="error">${w}</p>`).join("");
  return `<p>L = ${res.levels}, total cost ${res.cost} inner draws</p>` +
    table(["level", "h", "N", "cost share"], rows) + notes;
});

const trace = document.getElementById("trace");
trace.querySelector("button").onclick = guard(trace, () => {
  const res = JSON.parse(
    chainTrace(
      num(trace, "delta"),
      num(trace, "alpha"),
      num(trace, "k"),
      num(trace, "n"),
      num(trace, "gamma1"),
      num(trace, "offset"),
      field(trace, "warm").checked,
      num(trace, "seed"),
      400,
    ),
  );
  plot(trace.querySelector("canvas"), res.points, res.truth);
  const end = res.points[res.points.length - 1];
  return table(
    ["", "VaR", "ES"],
    [
      ["final iterate", end.xi.toFixed(5), end.chi.toFixed(5)],
      ["exact", res.truth.xi.toFixed(5), res.truth.chi.toFixed(5)],
    ],
  );
});

const decay = document.getElementById("decay");
decay.querySelector("button").onclick = guard(decay, () => {
  const res = JSON.parse(
    levelDecay(0.5, 0.975, num(decay, "k0"), num(decay, "levels"), num(decay, "pairs"), num(decay, "seed")),
  );
  const rows = res.rows.map((r) => [r.level, r.h.toPrecision(4), r.mean.toExponential(3), r.variance.toExponential(3)]);
  const slope = res.slope === null ? "n/a" : res.slope.toFixed(3);
  return table(["level", "h", "mean", "variance"], rows) + `<p>log-log slope of variance against h: ${slope}</p>`;
});
