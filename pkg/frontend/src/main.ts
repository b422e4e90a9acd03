/** DOM wiring: slide picker, ask panel, heatmap overlay, history. */

import { ApiClient, ApiRequestError } from "./api.js";
import { paintOverlay } from "./heatmap.js";
import { UiSession } from "./session.js";
import { ENTITY_KEYS, QUESTION_TEMPLATES, fillTemplate } from "./templates.js";

const api = new ApiClient("");
const session = new UiSession(api);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

const slideList = el("div", "slide-list");
const viewer = el("div", "viewer");
const thumb = el("img", "thumb") as HTMLImageElement;
const overlayCanvas = el("canvas", "overlay") as HTMLCanvasElement;
const questionBox = el("textarea", "question") as HTMLTextAreaElement;
questionBox.placeholder = "Ask about the selected slide…";
const beamToggle = el("input") as HTMLInputElement;
beamToggle.type = "checkbox";
beamToggle.checked = true;
const askButton = el("button", "ask", "Ask") as HTMLButtonElement;
const answerBox = el("div", "answer");
const errorBox = el("div", "error");
const keywordInput = el("input", "keyword") as HTMLInputElement;
keywordInput.placeholder = "keyword (e.g. her2)";
const heatmapButton = el("button", "", "Heatmap") as HTMLButtonElement;
heatmapButton.disabled = true;
const clearButton = el("button", "", "Clear overlay") as HTMLButtonElement;
const opacitySlider = el("input", "opacity") as HTMLInputElement;
opacitySlider.type = "range";
opacitySlider.min = "0";
opacitySlider.max = "1";
opacitySlider.step = "0.05";
opacitySlider.value = "0.4";
const historyList = el("ul", "history");
const chipRow = el("div", "chips");

function showError(message: string): void {
  errorBox.textContent = message;
  errorBox.style.display = message ? "block" : "none";
}

function repaintOverlay(): void {
  const ctx = overlayCanvas.getContext("2d");
  if (!ctx) return;
  if (!session.overlay) {
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    return;
  }
  paintOverlay(ctx, session.overlay.grid, overlayCanvas.width,
    overlayCanvas.height, session.opacity);
}

function renderHistory(): void {
  historyList.replaceChildren();
  for (const ex of session.history) {
    const item = el("li", "history-item");
    const q = el("div", "hq", `${ex.slideId}: ${ex.question}`);
    const a = el("div", "ha",
      `${ex.answer || "(empty)"}  [logp ${ex.logProb.toFixed(2)}]` +
      (ex.heatmapKeyword ? `  ♨ ${ex.heatmapKeyword}` : ""));
    item.append(q, a);
    item.addEventListener("click", () => {
      questionBox.value = ex.question; // history refills the question box
    });
    historyList.append(item);
  }
}

function updateHeatmapButton(): void {
  const text = questionBox.value.toLowerCase();
  const hit = ENTITY_KEYS.find((k) => text.includes(k));
  heatmapButton.disabled = session.history.length === 0;
  if (hit && !keywordInput.value) keywordInput.value = hit;
}

async function selectSlide(slideId: string): Promise<void> {
  session.selectSlide(slideId);
  thumb.src = api.thumbnailUrl(slideId);
  repaintOverlay();
  for (const child of Array.from(slideList.children)) {
    child.classList.toggle("selected",
      (child as HTMLElement).dataset.slideId === slideId);
  }
}

async function onAsk(): Promise<void> {
  showError("");
  const question = questionBox.value.trim();
  if (!question || session.busy) return;
  askButton.disabled = true;
  try {
    const ex = await session.ask(question, beamToggle.checked ? 3 : 1);
    answerBox.textContent =
      `${ex.answer || "(empty answer)"}   log-prob ${ex.logProb.toFixed(3)}` +
      (ex.truncated ? " (truncated)" : "");
    renderHistory();
    updateHeatmapButton();
  } catch (err) {
    showError(err instanceof ApiRequestError ? `${err.code}: ${err.detail}` : String(err));
  } finally {
    askButton.disabled = false;
  }
}

async function onHeatmap(): Promise<void> {
  showError("");
  const keyword = keywordInput.value.trim();
  if (!keyword) {
    showError("enter a keyword that occurs in the question");
    return;
  }
  try {
    await session.showHeatmap(keyword);
    repaintOverlay();
    renderHistory();
  } catch (err) {
    showError(err instanceof ApiRequestError ? `${err.code}: ${err.detail}` : String(err));
  }
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;

  const picker = el("div", "picker");
  picker.append(el("h2", "", "Slides"), slideList);

  for (const template of QUESTION_TEMPLATES) {
    const chip = el("button", "chip", template);
    chip.addEventListener("click", () => {
      const key = keywordInput.value.trim() || ENTITY_KEYS[0];
      questionBox.value = fillTemplate(template, key);
      updateHeatmapButton();
    });
    chipRow.append(chip);
  }

  const askRow = el("div", "ask-row");
  const beamLabel = el("label", "beam-label", " beam search ");
  beamLabel.prepend(beamToggle);
  askRow.append(askButton, beamLabel);

  const overlayRow = el("div", "overlay-row");
  overlayRow.append(keywordInput, heatmapButton, clearButton, opacitySlider);

  const stage = el("div", "stage");
  stage.append(thumb, overlayCanvas);

  viewer.append(stage, chipRow, questionBox, askRow, answerBox, errorBox,
    overlayRow, el("h2", "", "History"), historyList);
  root.append(picker, viewer);

  askButton.addEventListener("click", () => void onAsk());
  heatmapButton.addEventListener("click", () => void onHeatmap());
  clearButton.addEventListener("click", () => {
    session.hideHeatmap();
    repaintOverlay();
  });
  opacitySlider.addEventListener("input", () => {
    session.setOpacity(Number(opacitySlider.value));
    repaintOverlay();
  });
  questionBox.addEventListener("input", updateHeatmapButton);
  thumb.addEventListener("load", () => {
    overlayCanvas.width = thumb.clientWidth || thumb.naturalWidth;
    overlayCanvas.height = thumb.clientHeight || thumb.naturalHeight;
    repaintOverlay();
  });

  const slides = await session.loadSlides();
  if (!slides.length) {
    slideList.append(el("div", "empty", "No slides loaded on the server."));
    return;
  }
  for (const s of slides) {
    const card = el("div", "slide-card");
    card.dataset.slideId = s.slide_id;
    const img = el("img") as HTMLImageElement;
    img.src = s.thumbnail_url;
    img.alt = s.slide_id;
    card.append(img, el("div", "slide-name", `${s.slide_id} (${s.n_patches} patches)`));
    card.addEventListener("click", () => void selectSlide(s.slide_id));
    slideList.append(card);
  }
  await selectSlide(slides[0].slide_id);
}

void boot();
