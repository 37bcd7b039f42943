/**
 * Browser entry point: one patch at a time, two answer buttons, progress bar,
 * final confusion report. Keyboard: 1 = original, 2 = corrected. The session
 * id lives in the URL hash so a reload resumes from the service.
 */

import { Answer, ApiClient, ConfusionReport } from "./api.js";
import {
  SessionView,
  answerAndAdvance,
  currentItem,
  fetchReport,
  formatPercent,
  isComplete,
  progress,
  resumeFlow,
  startFlow,
} from "./flow.js";

const api = new ApiClient(window.location.origin);

let view: SessionView | null = null;
let submitting = false;
let zoomed = false;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function show(id: string, visible: boolean): void {
  el(id).style.display = visible ? "" : "none";
}

function setBanner(message: string | null): void {
  const banner = el("banner");
  banner.textContent = message ?? "";
  show("banner", message !== null);
}

function renderProgress(): void {
  if (!view) return;
  const p = progress(view);
  el("progress-label").textContent = `${p.answered} / ${p.total}`;
  const bar = el<HTMLDivElement>("progress-fill");
  bar.style.width = p.total ? `${(100 * p.answered) / p.total}%` : "0";
}

function renderItem(): void {
  if (!view) return;
  const itemId = currentItem(view);
  if (itemId === null) {
    void renderReport();
    return;
  }
  show("start-screen", false);
  show("judge-screen", true);
  show("report-screen", false);
  const img = el<HTMLImageElement>("patch-image");
  img.src = api.imageUrl(itemId);
  img.className = zoomed ? "zoom2x" : "";
  renderProgress();
}

async function renderReport(): Promise<void> {
  if (!view) return;
  let report: ConfusionReport;
  try {
    report = await fetchReport(api, view);
  } catch (error) {
    setBanner(`Could not fetch report: ${String(error)}. Retry?`);
    return;
  }
  show("judge-screen", false);
  show("report-screen", true);
  const m = report.matrix;
  el("cell-oo").textContent = String(m.original_clean.original_clean);
  el("cell-oc").textContent = String(m.original_clean.corrected);
  el("cell-co").textContent = String(m.corrected.original_clean);
  el("cell-cc").textContent = String(m.corrected.corrected);
  el("rate-corrected-as-original").textContent = formatPercent(report.corrected_as_original);
  el("rate-clean-as-corrected").textContent = formatPercent(report.clean_as_corrected);
  el("report-n").textContent = String(report.n);
}

async function submit(choice: Answer): Promise<void> {
  if (!view || submitting || isComplete(view)) return;
  submitting = true;
  setButtonsEnabled(false);
  try {
    view = await answerAndAdvance(api, view, choice);
    setBanner(null);
    window.location.hash = `s=${view.sessionId}`;
    renderItem();
  } catch (error) {
    setBanner(`Submit failed: ${String(error)}. The answer was not recorded; try again.`);
  } finally {
    submitting = false;
    setButtonsEnabled(true);
  }
}

function setButtonsEnabled(enabled: boolean): void {
  el<HTMLButtonElement>("btn-original").disabled = !enabled;
  el<HTMLButtonElement>("btn-corrected").disabled = !enabled;
}

async function begin(): Promise<void> {
  const count = Number(el<HTMLInputElement>("session-size").value) || 10;
  setBanner(null);
  try {
    view = await startFlow(api, count);
    window.location.hash = `s=${view.sessionId}`;
    renderItem();
  } catch (error) {
    setBanner(`Could not start session: ${String(error)}`);
  }
}

async function restoreFromHash(): Promise<boolean> {
  const match = window.location.hash.match(/s=([A-Za-z0-9-]+)/);
  if (!match) return false;
  try {
    view = await resumeFlow(api, match[1]);
    renderItem();
    return true;
  } catch {
    return false;
  }
}

function wire(): void {
  el("btn-start").addEventListener("click", () => void begin());
  el("btn-original").addEventListener("click", () => void submit("original_clean"));
  el("btn-corrected").addEventListener("click", () => void submit("corrected"));
  el("btn-zoom").addEventListener("click", () => {
    zoomed = !zoomed;
    renderItem();
  });
  document.addEventListener("keydown", (event) => {
    if (event.key === "1") void submit("original_clean");
    if (event.key === "2") void submit("corrected");
  });
  void restoreFromHash().then((restored) => {
    show("start-screen", !restored);
  });
}

document.addEventListener("DOMContentLoaded", wire);
