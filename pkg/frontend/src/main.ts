import { ApiClient } from "./api.js";
import { EditorSession, HeatmapMode } from "./session.js";
import { MeshViewer } from "./viewer.js";
import { displacementColors, segmentColors, uniformColors } from "./heatmap.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string): void {
  const banner = el<HTMLDivElement>("error-banner");
  banner.textContent = message;
  banner.style.display = "block";
  window.setTimeout(() => (banner.style.display = "none"), 6000);
}

function main(): void {
  const viewer = new MeshViewer(el<HTMLCanvasElement>("viewport"));
  const api = new ApiClient("");

  const session = new EditorSession(api, {
    onMesh(mesh) {
      if (session.neutral && mesh.faces.length !== session.neutral.faces.length) {
        viewer.setMesh(mesh.vertices, mesh.faces);
      } else if (mesh.origin === "neutral") {
        viewer.setMesh(mesh.vertices, mesh.faces);
      } else {
        viewer.updateVertices(mesh.vertices);
      }
      recolor(mesh.heat);
      el<HTMLSpanElement>("digest").textContent = mesh.digest.slice(0, 16);
      syncSliderInputs();
    },
    onState() {
      el<HTMLSpanElement>("stale").style.display = session.stale ? "inline" : "none";
    },
    onError: showError,
  });

  function recolor(heat?: number[]): void {
    const count = (session.displayed?.vertices.length ?? 0) / 3;
    if (count === 0) return;
    if (session.heatmap === "displacement" && heat) {
      viewer.setColors(displacementColors(heat));
    } else if (session.heatmap === "segment" && session.segments) {
      viewer.setColors(segmentColors(session.segments.labels));
    } else {
      viewer.setColors(uniformColors(count));
    }
  }

  function sliderRow(index: number, name: string): HTMLDivElement {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("label");
    label.textContent = name;
    const input = document.createElement("input");
    input.type = "range";
    input.min = "-0.25";
    input.max = "1.25";
    input.step = "0.01";
    input.value = "0";
    input.dataset.dim = String(index);
    input.addEventListener("input", () => session.setSlider(index, Number(input.value)));
    const value = document.createElement("span");
    value.className = "slider-value";
    value.textContent = "0.00";
    row.append(label, input, value);
    return row;
  }

  function buildSliders(): void {
    const named = el<HTMLDivElement>("sliders");
    named.replaceChildren();
    session.names.forEach((name, index) => named.appendChild(sliderRow(index, name)));
    const advanced = el<HTMLDivElement>("advanced-sliders");
    advanced.replaceChildren();
    for (let dim = session.names.length; dim < session.codeDims; dim++) {
      advanced.appendChild(sliderRow(dim, `extra ${dim}`));
    }
  }

  function syncSliderInputs(): void {
    document.querySelectorAll<HTMLInputElement>("input[type=range][data-dim]").forEach((input) => {
      const dim = Number(input.dataset.dim);
      const value = session.sliders[dim] ?? 0;
      input.value = String(value);
      const display = input.nextElementSibling as HTMLSpanElement | null;
      if (display) display.textContent = value.toFixed(2);
    });
  }

  async function readFile(input: HTMLInputElement): Promise<string | null> {
    const file = input.files?.[0];
    if (!file) return null;
    return await file.text();
  }

  el<HTMLInputElement>("target-file").addEventListener("change", async (event) => {
    const text = await readFile(event.target as HTMLInputElement);
    if (text === null) return;
    try {
      await session.loadTarget(text);
      buildSliders();
      syncSliderInputs();
      el<HTMLDivElement>("controls").style.display = "block";
    } catch {
      /* surfaced through onError */
    }
  });

  el<HTMLInputElement>("source-file").addEventListener("change", async (event) => {
    const text = await readFile(event.target as HTMLInputElement);
    if (text === null) return;
    try {
      await session.seedFromSource(text);
    } catch {
      /* surfaced through onError */
    }
  });

  el<HTMLButtonElement>("reset").addEventListener("click", () => {
    session.resetSliders();
    syncSliderInputs();
  });

  el<HTMLSelectElement>("heatmap").addEventListener("change", (event) => {
    session.setHeatmap((event.target as HTMLSelectElement).value as HeatmapMode);
    recolor(session.displayed?.heat);
  });

  el<HTMLButtonElement>("advanced-toggle").addEventListener("click", () => {
    const panel = el<HTMLDivElement>("advanced-sliders");
    panel.style.display = panel.style.display === "none" ? "block" : "none";
  });
}

main();
