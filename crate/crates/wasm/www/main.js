// Build the bindings first: see the README ("Browser demo").
import init, { mixture_heatmap, gradient_decay_curve, MotifDemo } from "./pkg/logictree_wasm.js";

const NAMES = ["FALSE", "AND", "A&!B", "A", "!A&B", "B", "XOR", "OR",
               "NOR", "XNOR", "!B", "A|!B", "!A", "!A|B", "NAND", "TRUE"];
const $ = (id) => document.getElementById(id);

function gaussian() {
  const u = 1 - Math.random(), v = Math.random();
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
}

function setupGates() {
  const box = $("gates");
  NAMES.forEach((name, i) => {
    const label = document.createElement("label");
    label.textContent = `${i} ${name}`;
    const input = document.createElement("input");
    input.type = "number";
    input.step = "0.5";
    input.value = i === 3 ? 5 : 0;
    input.id = `z${i}`;
    input.addEventListener("input", drawHeat);
    label.appendChild(input);
    box.appendChild(label);
  });
  $("residual").onclick = () => { NAMES.forEach((_, i) => $(`z${i}`).value = i === 3 ? 5 : 0); drawHeat(); };
  $("gauss").onclick = () => { NAMES.forEach((_, i) => $(`z${i}`).value = gaussian().toFixed(2)); drawHeat(); };
}

function drawHeat() {
  const res = 64;
  const logits = Float64Array.from(NAMES.map((_, i) => parseFloat($(`z${i}`).value) || 0));
  const out = mixture_heatmap(logits, res);
  const ctx = $("heat").getContext("2d");
  const img = ctx.createImageData(res, res);
  for (let k = 0; k < res * res; k++) {
    const v = Math.round(255 * out[k]);
    img.data.set([v, Math.round(80 + 0.5 * v), 255 - v, 255], 4 * k);
  }
  const tmp = document.createElement("canvas");
  tmp.width = tmp.height = res;
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, 256, 256);
  const p = out.slice(res * res);
  $("probs").textContent = NAMES.map((n, i) => `${n.padEnd(6)} ${p[i].toFixed(4)}`).join("\n");
}

function drawDecay() {
  const layers = parseInt($("layers").value, 10), width = parseInt($("width").value, 10);
  const curves = [["gaussian", "#c33"], ["residual", "#36c"]].map(([init, color]) =>
    [gradient_decay_curve(init, layers, width, 1n), color, init]);
  const c = $("decayplot"), ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const lo = Math.min(...curves.flatMap(([v]) => Array.from(v)).map(Math.log10), -1);
  const x = (i) => 40 + (i / layers) * (c.width - 60);
  const y = (v) => 10 + (Math.log10(v) / lo) * (c.height - 30);
  ctx.fillStyle = "#444";
  ctx.fillText("1", 20, y(1) + 4);
  ctx.fillText(`1e${Math.round(lo)}`, 2, c.height - 16);
  ctx.fillText("layers below output", c.width / 2 - 50, c.height - 2);
  for (const [v, color, name] of curves) {
    ctx.strokeStyle = color;
    ctx.beginPath();
    v.forEach((val, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(i), y(Math.max(val, 1e-300))));
    ctx.stroke();
    ctx.fillStyle = color;
    ctx.fillText(name, x(v.length - 1) - 50, y(Math.max(v[v.length - 1], 1e-300)) - 6);
  }
}

let demo, sampleIndex = 0;

function showStats() {
  const s = JSON.parse(demo.stats());
  const top = s.histogram.map((n, i) => [n, NAMES[i]]).filter(([n]) => n > 0)
    .sort((a, b) => b[0] - a[0]).map(([n, g]) => `${g}:${n}`).join(" ");
  $("stats").textContent =
    `step ${s.step}\nrelaxed test accuracy    ${(100 * s.soft_acc).toFixed(1)} %\n` +
    `discretized test accuracy ${(100 * s.hard_acc).toFixed(1)} %\n` +
    `gates ${s.gates_before} -> ${s.gates_after} after simplification, depth ${s.depth}\n${top}`;
  showSample();
}

function showSample() {
  const v = demo.sample(sampleIndex);
  const ctx = $("sample").getContext("2d");
  for (let k = 0; k < 64; k++) {
    ctx.fillStyle = v[k] ? "#111" : "#eee";
    ctx.fillRect((k % 8) * 16, Math.floor(k / 8) * 16, 16, 16);
  }
  const scores = demo.classify(v.slice(0, 64));
  const labels = ["horizontal", "vertical", "diagonal"];
  $("pred").textContent = `label ${labels[v[64]]}\nscores ${Array.from(scores).join(" / ")}`;
}

await init();
setupGates();
drawHeat();
drawDecay();
$("decay").onclick = drawDecay;
demo = new MotifDemo(1n);
showStats();
$("train").onclick = () => { demo.train(100); showStats(); };
$("reset").onclick = () => { demo.free(); demo = new MotifDemo(BigInt(Date.now() % 1000)); showStats(); };
$("next").onclick = () => { sampleIndex++; showSample(); };
