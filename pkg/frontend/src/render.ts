import { rectToDisplay } from "./coords.js";
import { DraftRegion, Rect } from "./types.js";

// Rendering deliberately avoids any enhancement: nearest-neighbour
// scaling only, so the pixels a rater judges are the pixels the model
// produced.

export function drawImage(
    ctx: CanvasRenderingContext2D,
    image: CanvasImageSource & { width: number; height: number },
    zoom: number,
): void {
    const w = Math.round(image.width * zoom);
    const h = Math.round(image.height * zoom);
    ctx.canvas.width = w;
    ctx.canvas.height = h;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, w, h);
    ctx.drawImage(image, 0, 0, w, h);
}

export function drawDrafts(
    ctx: CanvasRenderingContext2D,
    drafts: readonly DraftRegion[],
    zoom: number,
): void {
    ctx.save();
    ctx.lineWidth = 2;
    ctx.strokeStyle = "#ff5252";
    ctx.font = "12px sans-serif";
    ctx.fillStyle = "#ff5252";
    drafts.forEach((draft, i) => {
        const r = rectToDisplay(draft, zoom);
        ctx.strokeRect(r.x + 0.5, r.y + 0.5, r.w, r.h);
        ctx.fillText(String(i + 1), r.x + 4, r.y + 14);
    });
    ctx.restore();
}

/** The rubber-band rectangle while a drag is still in progress. */
export function drawPendingDrag(ctx: CanvasRenderingContext2D, rect: Rect): void {
    ctx.save();
    ctx.setLineDash([4, 3]);
    ctx.lineWidth = 1;
    ctx.strokeStyle = "#ffd740";
    ctx.strokeRect(rect.x + 0.5, rect.y + 0.5, rect.w, rect.h);
    ctx.restore();
}
