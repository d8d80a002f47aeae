// Wire types for the judging service API, matching the server's JSON
// field names exactly.

export type Judgment = "real" | "fake";

export interface Rect {
    x: number;
    y: number;
    w: number;
    h: number;
}

export interface DraftRegion extends Rect {
    note?: string;
}

export interface SessionInfo {
    session_id: string;
    pool_id: string;
    rater_id: string;
    total: number;
}

export interface ImageStep {
    image_id: string;
    index: number;
    total: number;
    pool_id: string;
    url: string;
}

export interface DoneStep {
    done: true;
    total: number;
    pool_id: string;
}

export type NextStep = ImageStep | DoneStep;

export function isDone(step: NextStep): step is DoneStep {
    return "done" in step && step.done === true;
}

export interface VerdictAck {
    stored: boolean;
    cursor: number;
    total: number;
    done: boolean;
}

export interface VerdictPayload {
    image_id: string;
    judgment: Judgment;
    regions: DraftRegion[];
    comment?: string;
}
