import { Rect } from "./types.js";

// The canvas shows the image scaled by an integer-free zoom factor, so a
// display coordinate divided by the zoom is an image-pixel coordinate.
// All stored rectangles live in image pixels; only rendering re-applies
// the zoom.

export interface DragGesture {
    startX: number;
    startY: number;
    endX: number;
    endY: number;
}

export function displayToImage(x: number, y: number, zoom: number): { x: number; y: number } {
    if (zoom <= 0) throw new Error(`zoom must be positive, got ${zoom}`);
    return { x: x / zoom, y: y / zoom };
}

/** Normalize a drag into an image-pixel rectangle.
 *
 * Corners are rounded to whole pixels and clamped to the image bounds.
 * Returns null for drags that collapse to zero area, those are clicks,
 * not annotations. */
export function rectFromDrag(
    drag: DragGesture,
    zoom: number,
    imageWidth: number,
    imageHeight: number,
): Rect | null {
    const a = displayToImage(drag.startX, drag.startY, zoom);
    const b = displayToImage(drag.endX, drag.endY, zoom);

    const clampX = (v: number) => Math.min(Math.max(v, 0), imageWidth);
    const clampY = (v: number) => Math.min(Math.max(v, 0), imageHeight);

    const left = Math.round(clampX(Math.min(a.x, b.x)));
    const right = Math.round(clampX(Math.max(a.x, b.x)));
    const top = Math.round(clampY(Math.min(a.y, b.y)));
    const bottom = Math.round(clampY(Math.max(a.y, b.y)));

    const w = right - left;
    const h = bottom - top;
    if (w <= 0 || h <= 0) return null;
    return { x: left, y: top, w, h };
}

export function rectToDisplay(rect: Rect, zoom: number): Rect {
    return { x: rect.x * zoom, y: rect.y * zoom, w: rect.w * zoom, h: rect.h * zoom };
}

export const MIN_ZOOM = 1;
export const MAX_ZOOM = 4;

export function clampZoom(zoom: number): number {
    if (!Number.isFinite(zoom)) return MIN_ZOOM;
    return Math.min(Math.max(zoom, MIN_ZOOM), MAX_ZOOM);
}
