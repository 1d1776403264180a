/** Workbench bootstrap: joint sliders, scene editor, method panels, playback. */

import { ApiClient } from "./api.js";
import { JobPanel, RunComparison } from "./panels.js";
import { SceneView } from "./scene3d.js";
import { WorkbenchState } from "./state.js";
import type { PlanRequest, SphereDraft } from "./types.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function sliderRow(
  label: string, lo: number, hi: number, value: number,
  onInput: (v: number) => number,
): HTMLDivElement {
  const row = document.createElement("div");
  row.className = "slider-row";
  const name = document.createElement("span");
  name.textContent = label;
  const slider = document.createElement("input");
  slider.type = "range";
  slider.min = String(lo);
  slider.max = String(hi);
  slider.step = "0.01";
  slider.value = String(value);
  const readout = document.createElement("span");
  readout.className = "readout";
  readout.textContent = value.toFixed(2);
  slider.addEventListener("input", () => {
    const clamped = onInput(Number(slider.value));
    slider.value = String(clamped);
    readout.textContent = clamped.toFixed(2);
  });
  row.append(name, slider, readout);
  return row;
}

async function boot(): Promise<void> {
  const meta = await api.getRobot();
  const state = new WorkbenchState(meta);
  const view = new SceneView(el<HTMLCanvasElement>("view"), meta);
  const comparison = new RunComparison(api);
  let activePanel: JobPanel | null = null;

  const refreshPreviewPose = async () => {
    const { link_poses } = await api.fk(state.startConfig, meta.name);
    view.setPose(link_poses);
  };

  // --- joint sliders
  const startBox = el<HTMLDivElement>("start-sliders");
  const goalBox = el<HTMLDivElement>("goal-sliders");
  for (let j = 0; j < meta.dof; j++) {
    startBox.append(sliderRow(`q${j + 1}`, meta.limits_lo[j], meta.limits_hi[j],
      state.startConfig[j], (v) => {
        const c = state.setStart(j, v);
        void refreshPreviewPose();
        return c;
      }));
    goalBox.append(sliderRow(`q${j + 1}`, meta.limits_lo[j], meta.limits_hi[j],
      state.goal.config?.[j] ?? 0, (v) => state.setGoalJoint(j, v)));
  }

  // --- goal mode toggle
  const goalMode = el<HTMLSelectElement>("goal-mode");
  const poseBox = el<HTMLDivElement>("goal-pose");
  goalMode.addEventListener("change", () => {
    const usePose = goalMode.value === "pose";
    goalBox.style.display = usePose ? "none" : "";
    poseBox.style.display = usePose ? "" : "none";
    if (usePose) {
      const read = (id: string) => Number(el<HTMLInputElement>(id).value);
      state.setGoalPose([read("pose-x"), read("pose-y"), read("pose-z")],
        [read("pose-qx"), read("pose-qy"), read("pose-qz"), read("pose-qw")]);
    } else {
      state.setGoalConfigMode();
    }
  });

  // --- obstacle editor
  const sphereList = el<HTMLUListElement>("sphere-list");
  const sphereError = el<HTMLSpanElement>("sphere-error");
  const syncScene = () => {
    view.setObstacles(state.scene);
    sphereList.innerHTML = "";
    state.scene.spheres.forEach((s, i) => {
      const li = document.createElement("li");
      li.textContent = `(${s.center.map((c) => c.toFixed(2)).join(", ")}) r=${s.radius}`
        + ` +S=${(s.radius + meta.safe_distance).toFixed(3)}`;
      const del = document.createElement("button");
      del.textContent = "remove";
      del.addEventListener("click", () => {
        state.removeSphere(i);
        syncScene();
      });
      li.append(" ", del);
      sphereList.append(li);
    });
  };
  el<HTMLButtonElement>("add-sphere").addEventListener("click", () => {
    const read = (id: string) => Number(el<HTMLInputElement>(id).value);
    const draft: SphereDraft = {
      center: [read("sphere-x"), read("sphere-y"), read("sphere-z")],
      radius: read("sphere-r"),
    };
    const problem = state.addSphere(draft);
    sphereError.textContent = problem ?? "";
    syncScene();
  });
  el<HTMLButtonElement>("clear-spheres").addEventListener("click", () => {
    state.clearSpheres();
    sphereError.textContent = "";
    syncScene();
  });

  // --- method selection
  const methodBox = el<HTMLDivElement>("methods");
  for (const method of meta.methods) {
    const label = document.createElement("label");
    const check = document.createElement("input");
    check.type = "checkbox";
    check.value = method;
    check.addEventListener("change", () => state.toggleMethod(method, check.checked));
    label.append(check, ` ${method}`);
    methodBox.append(label);
  }

  // --- export / import
  el<HTMLButtonElement>("export-task").addEventListener("click", () => {
    const blob = new Blob([JSON.stringify(state.exportTask(), null, 1)],
      { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "task.json";
    a.click();
  });
  el<HTMLInputElement>("import-task").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const task = JSON.parse(await file.text()) as PlanRequest;
    const problem = state.importTask(task);
    sphereError.textContent = problem ?? "";
    if (problem === null) {
      syncScene();
      location.reload(); // simplest way to rebuild sliders from imported state
    }
  });

  // --- run and compare
  const panelsBox = el<HTMLDivElement>("panels");
  const renderPanels = () => {
    panelsBox.innerHTML = "";
    for (const panel of comparison.panels) {
      const card = document.createElement("div");
      card.className = "panel" + (panel === activePanel ? " active" : "");
      const row = panel.metricsRow();
      card.innerHTML = `<strong>${panel.method}</strong> — ${row.status ?? panel.phase}`
        + (row.length ? `<br>length ${row.length}, ${row.time}, clearance ${row.clearance}` : "")
        + (panel.errorText ? `<br><em>${panel.errorText}</em>` : "");
      if (panel.playback) {
        const btn = document.createElement("button");
        btn.textContent = "playback";
        btn.addEventListener("click", () => {
          activePanel = panel;
          scrubber.max = String(panel.playback!.frameCount - 1);
          renderPanels();
        });
        card.append(document.createElement("br"), btn);
      }
      panelsBox.append(card);
    }
  };
  el<HTMLButtonElement>("run").addEventListener("click", () => {
    void comparison.run(state, { intervalMs: 500, onUpdate: renderPanels })
      .then(renderPanels)
      .catch((err) => { sphereError.textContent = String(err); });
    renderPanels();
  });

  // --- playback controls
  const scrubber = el<HTMLInputElement>("scrubber");
  const frameLabel = el<HTMLSpanElement>("frame-label");
  const clearanceLabel = el<HTMLSpanElement>("clearance-label");
  el<HTMLButtonElement>("play").addEventListener("click", () => activePanel?.playback?.play());
  el<HTMLButtonElement>("pause").addEventListener("click", () => activePanel?.playback?.pause());
  scrubber.addEventListener("input", () => {
    activePanel?.playback?.seek(Number(scrubber.value));
    activePanel?.playback?.pause();
  });

  let last = performance.now();
  const animate = (now: number) => {
    const dt = (now - last) / 1000;
    last = now;
    const playback = activePanel?.playback;
    if (playback) {
      playback.tick(dt);
      const frame = playback.frameIndex;
      view.setPose(playback.posesAt(frame));
      if (!playback.playing) scrubber.value = String(frame);
      const clearance = playback.clearanceAt(frame);
      frameLabel.textContent = `frame ${frame + 1}/${playback.frameCount}`
        + ` q=[${playback.configAt(frame).map((v) => v.toFixed(2)).join(", ")}]`;
      clearanceLabel.textContent = clearance === null
        ? "clearance: n/a"
        : `clearance: ${clearance.toFixed(3)} m`;
      clearanceLabel.className = playback.isWarningFrame(frame) ? "warn" : "";
    }
    view.render();
    requestAnimationFrame(animate);
  };
  const canvas = el<HTMLCanvasElement>("view");
  view.resize(canvas.clientWidth || 900, canvas.clientHeight || 600);
  syncScene();
  await refreshPreviewPose();
  requestAnimationFrame(animate);
}

boot().catch((err) => {
  document.body.insertAdjacentHTML(
    "afterbegin", `<p class="boot-error">workbench failed to start: ${err}</p>`);
});
