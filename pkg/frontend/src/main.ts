import { ApiClient } from "./api.js";
import { MAX_ZOOM, MIN_ZOOM } from "./coords.js";
import { drawDrafts, drawImage, drawPendingDrag } from "./render.js";
import { SessionController, ViewState } from "./session.js";
import { Judgment } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
}

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("base") ?? "";
const poolId = params.get("pool") ?? "";
const raterId = params.get("rater") ?? "";
const seedParam = params.get("seed");

const canvas = el<HTMLCanvasElement>("viewer");
const ctx = canvas.getContext("2d");
if (!ctx) throw new Error("canvas 2d context unavailable");

const progressLabel = el<HTMLSpanElement>("progress");
const zoomLabel = el<HTMLSpanElement>("zoom-label");
const noticeBox = el<HTMLDivElement>("notice");
const retryButton = el<HTMLButtonElement>("retry");
const realButton = el<HTMLButtonElement>("judge-real");
const fakeButton = el<HTMLButtonElement>("judge-fake");
const commentBox = el<HTMLTextAreaElement>("comment");
const draftList = el<HTMLUListElement>("draft-list");
const doneScreen = el<HTMLDivElement>("done");
const judgingPanel = el<HTMLDivElement>("judging");
const setupPanel = el<HTMLDivElement>("setup");

const api = new ApiClient(baseUrl);
const controller = new SessionController(api, render);

let loadedImage: HTMLImageElement | null = null;
let loadedImageId: string | null = null;
let dragStart: { x: number; y: number } | null = null;

function redraw(state: ViewState): void {
    if (!loadedImage || !loadedImage.complete) return;
    drawImage(ctx!, loadedImage, state.zoom);
    drawDrafts(ctx!, state.drafts, state.zoom);
}

function render(state: ViewState): void {
    setupPanel.hidden = state.phase !== "idle";
    doneScreen.hidden = state.phase !== "done";
    judgingPanel.hidden = state.phase === "idle" || state.phase === "done";

    progressLabel.textContent = state.progress
        ? `${state.progress.k} / ${state.progress.n}`
        : "";
    zoomLabel.textContent = `${state.zoom.toFixed(1)}x`;
    noticeBox.textContent = state.notice ?? "";
    noticeBox.hidden = !state.notice;
    retryButton.hidden = state.phase !== "error" && state.failures === 0;

    const canJudge = state.phase === "judging";
    realButton.disabled = !canJudge;
    fakeButton.disabled = !canJudge;

    if (commentBox.value !== state.comment) commentBox.value = state.comment;

    draftList.replaceChildren(
        ...state.drafts.map((draft, i) => {
            const item = document.createElement("li");
            const label = document.createElement("span");
            label.textContent =
                `#${i + 1} (${draft.x}, ${draft.y}) ${draft.w}x${draft.h}` +
                (draft.note ? ` - ${draft.note}` : "");
            const note = document.createElement("button");
            note.textContent = "note";
            note.addEventListener("click", () => {
                const text = window.prompt("what looks wrong here?", draft.note ?? "");
                if (text !== null) controller.setDraftNote(i, text);
            });
            const remove = document.createElement("button");
            remove.textContent = "remove";
            remove.addEventListener("click", () => controller.removeDraft(i));
            item.append(label, note, remove);
            return item;
        }),
    );

    if (state.image && state.image.image_id !== loadedImageId) {
        loadedImageId = state.image.image_id;
        const img = new Image();
        img.onload = () => {
            loadedImage = img;
            controller.setImageSize(img.naturalWidth, img.naturalHeight);
        };
        img.src = api.imageUrl(state.image.url);
    } else if (!state.image) {
        loadedImage = null;
        loadedImageId = null;
        ctx!.clearRect(0, 0, canvas.width, canvas.height);
    }
    redraw(state);
}

function canvasPoint(event: MouseEvent): { x: number; y: number } {
    const bounds = canvas.getBoundingClientRect();
    return { x: event.clientX - bounds.left, y: event.clientY - bounds.top };
}

canvas.addEventListener("mousedown", (event) => {
    dragStart = canvasPoint(event);
});

canvas.addEventListener("mousemove", (event) => {
    if (!dragStart) return;
    const point = canvasPoint(event);
    redraw(controller.getState());
    drawPendingDrag(ctx!, {
        x: Math.min(dragStart.x, point.x),
        y: Math.min(dragStart.y, point.y),
        w: Math.abs(point.x - dragStart.x),
        h: Math.abs(point.y - dragStart.y),
    });
});

canvas.addEventListener("mouseup", (event) => {
    if (!dragStart) return;
    const point = canvasPoint(event);
    controller.addDraft({
        startX: dragStart.x,
        startY: dragStart.y,
        endX: point.x,
        endY: point.y,
    });
    dragStart = null;
    redraw(controller.getState());
});

canvas.addEventListener("mouseleave", () => {
    dragStart = null;
    redraw(controller.getState());
});

el<HTMLButtonElement>("zoom-in").addEventListener("click", () => {
    controller.setZoom(Math.min(controller.getState().zoom + 0.5, MAX_ZOOM));
});
el<HTMLButtonElement>("zoom-out").addEventListener("click", () => {
    controller.setZoom(Math.max(controller.getState().zoom - 0.5, MIN_ZOOM));
});

function judge(judgment: Judgment): void {
    void controller.submit(judgment);
}

realButton.addEventListener("click", () => judge("real"));
fakeButton.addEventListener("click", () => judge("fake"));
retryButton.addEventListener("click", () => void controller.retry());
commentBox.addEventListener("input", () => controller.setComment(commentBox.value));

// low-friction judging: R for real, F for fake
window.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLTextAreaElement) return;
    if (event.key === "r" || event.key === "R") judge("real");
    if (event.key === "f" || event.key === "F") judge("fake");
});

el<HTMLButtonElement>("start").addEventListener("click", () => {
    const pool = (el<HTMLInputElement>("pool-input").value || poolId).trim();
    const rater = (el<HTMLInputElement>("rater-input").value || raterId).trim();
    if (!pool || !rater) {
        noticeBox.hidden = false;
        noticeBox.textContent = "both a pool id and a rater id are required";
        return;
    }
    void controller.start(rater, pool, seedParam ? Number(seedParam) : undefined);
});

if (poolId) el<HTMLInputElement>("pool-input").value = poolId;
if (raterId) el<HTMLInputElement>("rater-input").value = raterId;
render(controller.getState());
