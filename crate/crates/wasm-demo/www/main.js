// Built by build.sh into ./pkg.
import init, { views, cost, shift } from "./pkg/mvfnet_wasm.js";

const $ = (id) => document.getElementById(id);
const CLASSES = ["left", "left reversed", "right", "right reversed", "up", "up reversed", "down", "down reversed"];

function guard(target, f) {
  try {
    f();
  } catch (e) {
    target.innerHTML = `<p class="error">${e.message ?? e}</p>`;
  }
}

// Grey for non-negative maps, blue/red for signed ones.
function drawMap(values, offset, size, signed, scale) {
  const canvas = document.createElement("canvas");
  canvas.width = size;
  canvas.height = size;
  canvas.style.width = canvas.style.height = `${size * 3}px`;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(size, size);
  for (let i = 0; i < size * size; i++) {
    const v = values[offset + i] / scale;
    const [r, g, b] = signed
      ? v >= 0 ? [255, 255 * (1 - v), 255 * (1 - v)] : [255 * (1 + v), 255 * (1 + v), 255]
      : [255 * v, 255 * v, 255 * v];
    img.data.set([r, g, b, 255], 4 * i);
  }
  ctx.putImageData(img, 0, 0);
  return canvas;
}

function renderViews() {
  const out = $("views-out");
  guard(out, () => {
    const v = JSON.parse(views(+$("views-class").value, +$("views-seed").value, +$("beta-t").value, +$("beta-h").value, +$("beta-w").value));
    out.replaceChildren();
    const frame = v.size * v.size;
    const rows = [["input", v.input, false], ["temporal", v.temporal, true], ["height", v.height, true], ["width", v.width, true], ["fused", v.fused, false]];
    for (const [name, data, signed] of rows) {
      const scale = Math.max(1e-9, ...data.map(Math.abs));
      const row = document.createElement("div");
      row.className = "row";
      row.append(Object.assign(document.createElement("span"), { textContent: name }));
      for (let t = 0; t < v.frames; t++) row.append(drawMap(data, t * frame, v.size, signed, scale));
      out.append(row);
    }
  });
}

function renderCost() {
  const out = $("cost-out");
  guard(out, () => {
    const r = JSON.parse(cost($("cost-backbone").value, +$("cost-frames").value, +$("cost-alpha").value, $("cost-stages").value, 400, +$("cost-crops").value, +$("cost-clips").value));
    const byKind = {};
    for (const l of r.per_layer) byKind[l.kind] = (byKind[l.kind] ?? 0) + l.macs + l.norm_ops + l.act_ops;
    const rows = Object.entries(byKind).map(([k, ops]) => `<tr><td>${k}</td><td>${(ops / 1e9).toFixed(3)}G</td></tr>`).join("");
    const protocol = r.protocol_total ? `<p>Test protocol: <b>${r.protocol_total.display}</b> = ${r.protocol_total.total_gflops.toFixed(1)}G per video</p>` : "";
    out.innerHTML = `<p><b>${r.total_gflops.toFixed(2)}G</b> per clip, <b>${r.total_mparams.toFixed(2)}M</b> parameters,
      ${r.mvf_blocks} MVF blocks</p>${protocol}<table><tr><th>layer kind</th><th>ops</th></tr>${rows}</table>`;
  });
}

function grid(title, values, channels, frames) {
  let html = `<div><h3>${title}</h3><table><tr><th>c \\ t</th>${[...Array(frames).keys()].map((t) => `<th>${t}</th>`).join("")}</tr>`;
  for (let c = 0; c < channels; c++) {
    html += `<tr><th>${c}</th>`;
    for (let t = 0; t < frames; t++) {
      const v = values[c * frames + t];
      html += `<td class="${v === 0 ? "zero" : ""}">${v}</td>`;
    }
    html += "</tr>";
  }
  return html + "</table></div>";
}

function renderShift() {
  const out = $("shift-out");
  guard(out, () => {
    const g = JSON.parse(shift(+$("shift-channels").value, +$("shift-frames").value, +$("shift-fraction").value));
    const verdict = g.identical ? `<p class="ok">Module output equals the shift exactly.</p>` : `<p class="error">Outputs differ.</p>`;
    out.innerHTML = `<p>${g.fold} channel(s) shift forward (taps [1, 0, 0]), ${g.fold} backward (taps [0, 0, 1]).</p>${verdict}
      <div class="grids">${grid("input", g.input, g.channels, g.frames)}${grid("shift", g.shifted, g.channels, g.frames)}${grid("MVF module", g.module, g.channels, g.frames)}</div>`;
  });
}

await init();
CLASSES.forEach((name, i) => $("views-class").append(new Option(name, i)));
$("views-class").value = 2;
for (const [ids, render] of [
  [["views-class", "views-seed", "beta-t", "beta-h", "beta-w"], renderViews],
  [["cost-backbone", "cost-frames", "cost-alpha", "cost-stages", "cost-crops", "cost-clips"], renderCost],
  [["shift-channels", "shift-frames", "shift-fraction"], renderShift],
]) {
  ids.forEach((id) => $(id).addEventListener("input", render));
  render();
}
