import { RetrievalClient } from "./api";
import {
  beginStroke,
  clear,
  DEFAULT_CANVAS_SIZE,
  emptyStrokeSet,
  extendStroke,
  isEmpty,
  undo,
} from "./strokes";
import { ResultCard, StrokeSet } from "./types";
import { cardLabel, inspectHeading } from "./view";

const client = new RetrievalClient({ baseUrl: "" });

let strokes: StrokeSet = emptyStrokeSet();
let drawing = false;

const app = document.createElement("div");
app.className = "app";
document.body.appendChild(app);

const title = document.createElement("h1");
title.textContent = "Sketch search";
app.appendChild(title);

const row = document.createElement("div");
row.className = "row";
app.appendChild(row);

// --- canvas pane ------------------------------------------------------

const canvasPane = document.createElement("div");
row.appendChild(canvasPane);

const canvas = document.createElement("canvas");
canvas.width = DEFAULT_CANVAS_SIZE;
canvas.height = DEFAULT_CANVAS_SIZE;
canvas.className = "sketchpad";
canvasPane.appendChild(canvas);
const ctx = canvas.getContext("2d")!;

function redraw(): void {
  ctx.fillStyle = "white";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "black";
  ctx.lineWidth = strokes.penWidth;
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  for (const stroke of strokes.strokes) {
    if (stroke.points.length === 0) continue;
    ctx.beginPath();
    ctx.moveTo(stroke.points[0].x, stroke.points[0].y);
    for (const p of stroke.points.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  }
  submitButton.disabled = isEmpty(strokes);
}

function canvasPoint(e: PointerEvent) {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((e.clientX - rect.left) / rect.width) * canvas.width,
    y: ((e.clientY - rect.top) / rect.height) * canvas.height,
    t: e.timeStamp,
  };
}

canvas.addEventListener("pointerdown", (e) => {
  drawing = true;
  canvas.setPointerCapture(e.pointerId);
  strokes = beginStroke(strokes, canvasPoint(e));
  redraw();
});
canvas.addEventListener("pointermove", (e) => {
  if (!drawing) return;
  strokes = extendStroke(strokes, canvasPoint(e));
  redraw();
});
canvas.addEventListener("pointerup", () => {
  drawing = false;
});

const toolbar = document.createElement("div");
toolbar.className = "toolbar";
canvasPane.appendChild(toolbar);

const undoButton = document.createElement("button");
undoButton.textContent = "Undo";
undoButton.addEventListener("click", () => {
  strokes = undo(strokes);
  redraw();
});
toolbar.appendChild(undoButton);

const clearButton = document.createElement("button");
clearButton.textContent = "Clear";
clearButton.addEventListener("click", () => {
  strokes = clear(strokes);
  redraw();
});
toolbar.appendChild(clearButton);

const kLabel = document.createElement("label");
kLabel.textContent = "k: ";
const kSlider = document.createElement("input");
kSlider.type = "range";
kSlider.min = "1";
kSlider.max = "20";
kSlider.value = "5";
const kValue = document.createElement("span");
kValue.textContent = kSlider.value;
kSlider.addEventListener("input", () => {
  kValue.textContent = kSlider.value;
});
kLabel.appendChild(kSlider);
kLabel.appendChild(kValue);
toolbar.appendChild(kLabel);

const submitButton = document.createElement("button");
submitButton.textContent = "Search";
toolbar.appendChild(submitButton);

const status = document.createElement("div");
status.className = "status";
canvasPane.appendChild(status);

// --- results pane -----------------------------------------------------

const resultsPane = document.createElement("div");
resultsPane.className = "results";
row.appendChild(resultsPane);

function renderCards(cards: ResultCard[]): void {
  resultsPane.replaceChildren();
  cards.forEach((card, rankIdx) => {
    const el = document.createElement("div");
    el.className = "card";
    const img = document.createElement("img");
    if (card.thumbnail_url) img.src = client.resolveUrl(card.thumbnail_url);
    img.alt = card.shape_id;
    el.appendChild(img);
    const caption = document.createElement("div");
    caption.textContent = cardLabel(card, rankIdx);
    el.appendChild(caption);
    el.addEventListener("click", () => openInspect(card));
    resultsPane.appendChild(el);
  });
}

// --- inspect panel ----------------------------------------------------

const panel = document.createElement("div");
panel.className = "inspect hidden";
app.appendChild(panel);

function openInspect(card: ResultCard): void {
  panel.replaceChildren();
  const heading = document.createElement("h2");
  heading.textContent = inspectHeading(card);
  panel.appendChild(heading);
  for (const url of card.view_urls) {
    const img = document.createElement("img");
    img.src = client.resolveUrl(url);
    img.addEventListener("error", () => {
      const placeholder = document.createElement("span");
      placeholder.textContent = "view unavailable";
      img.replaceWith(placeholder);
    });
    panel.appendChild(img);
  }
  panel.classList.remove("hidden");
}

document.addEventListener("keydown", (e) => {
  if (e.key === "Escape") panel.classList.add("hidden");
});

// --- submit -----------------------------------------------------------

async function doSubmit(): Promise<void> {
  status.textContent = "searching…";
  try {
    const result = await client.submit(strokes, Number(kSlider.value));
    if (result === null) return; // superseded by a newer submit
    renderCards(result.entries);
    status.textContent = `embed ${result.timing_ms.embed.toFixed(0)} ms`;
  } catch (err) {
    status.replaceChildren();
    status.append(`search failed: ${err} `);
    const retry = document.createElement("button");
    retry.textContent = "Retry";
    retry.addEventListener("click", () => void doSubmit());
    status.appendChild(retry);
  }
}

submitButton.addEventListener("click", () => void doSubmit());
redraw();
