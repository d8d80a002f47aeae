import { ApiClient, ConflictError, ValidationError } from "./api.js";
import { DragGesture, clampZoom, rectFromDrag } from "./coords.js";
import {
    DraftRegion,
    ImageStep,
    Judgment,
    SessionInfo,
    isDone,
} from "./types.js";

export type Phase = "idle" | "loading" | "judging" | "submitting" | "done" | "error";

export interface ViewState {
    phase: Phase;
    session: SessionInfo | null;
    image: ImageStep | null;
    imageSize: { w: number; h: number } | null;
    zoom: number;
    drafts: DraftRegion[];
    comment: string;
    /** "k of n": k is the server-reported verdict count plus one. */
    progress: { k: number; n: number } | null;
    notice: string | null;
    failures: number;
}

export const MAX_FETCH_FAILURES = 3;

function initialState(): ViewState {
    return {
        phase: "idle",
        session: null,
        image: null,
        imageSize: null,
        zoom: 1,
        drafts: [],
        comment: "",
        progress: null,
        notice: null,
        failures: 0,
    };
}

/** Drives one rater session: fetch, annotate, submit, repeat.
 *
 * All mutations are sequential; nothing here talks to the DOM. The
 * rendering layer subscribes through onChange and reads snapshots. */
export class SessionController {
    private state: ViewState = initialState();

    constructor(
        private readonly api: ApiClient,
        private readonly onChange: (state: ViewState) => void = () => undefined,
    ) {}

    getState(): ViewState {
        return { ...this.state, drafts: this.state.drafts.slice() };
    }

    private emit(): void {
        this.onChange(this.getState());
    }

    async start(raterId: string, poolId: string, seed?: number): Promise<void> {
        this.state = initialState();
        this.state.phase = "loading";
        this.emit();
        try {
            this.state.session = await this.api.openSession(raterId, poolId, seed);
        } catch (err) {
            this.state.phase = "error";
            this.state.notice = `could not open session: ${(err as Error).message}`;
            this.emit();
            return;
        }
        await this.fetchNext();
    }

    /** Ask the server for the current image. Failures keep the drafts
     * and show a retry prompt; the third consecutive failure parks the
     * session in an error state that only retry() leaves. */
    async fetchNext(): Promise<void> {
        const session = this.state.session;
        if (!session || this.state.phase === "error") return;
        const previous = this.state.image;
        this.state.phase = "loading";
        this.emit();
        let step;
        try {
            step = await this.api.next(session.session_id);
        } catch (err) {
            this.state.failures += 1;
            this.state.notice = `could not load the next image: ${(err as Error).message}`;
            this.state.phase = this.state.failures >= MAX_FETCH_FAILURES ? "error" : "loading";
            this.state.image = previous;
            this.emit();
            return;
        }
        this.state.failures = 0;
        this.state.notice = null;
        if (isDone(step)) {
            this.state.phase = "done";
            this.state.image = null;
            this.state.drafts = [];
            this.state.comment = "";
            this.state.progress = { k: step.total, n: step.total };
        } else {
            this.state.phase = "judging";
            if (!previous || previous.image_id !== step.image_id) {
                // a genuinely new image; drafts from the old one are gone
                this.state.drafts = [];
                this.state.comment = "";
                this.state.imageSize = null;
            }
            this.state.image = step;
            this.state.progress = { k: step.index + 1, n: step.total };
        }
        this.emit();
    }

    /** Manual retry from the hard error state. */
    async retry(): Promise<void> {
        if (!this.state.session) return;
        this.state.failures = 0;
        this.state.phase = "loading";
        this.state.notice = null;
        this.emit();
        await this.fetchNext();
    }

    /** Natural size of the displayed PNG, reported by the image loader. */
    setImageSize(width: number, height: number): void {
        this.state.imageSize = { w: width, h: height };
        this.emit();
    }

    setZoom(zoom: number): void {
        this.state.zoom = clampZoom(zoom);
        this.emit();
    }

    /** Turn a completed drag into a draft region, or null for clicks. */
    addDraft(drag: DragGesture): DraftRegion | null {
        const size = this.state.imageSize;
        if (this.state.phase !== "judging" || !size) return null;
        const rect = rectFromDrag(drag, this.state.zoom, size.w, size.h);
        if (!rect) return null;
        const draft: DraftRegion = { ...rect };
        this.state.drafts.push(draft);
        this.emit();
        return draft;
    }

    removeDraft(index: number): void {
        if (index < 0 || index >= this.state.drafts.length) return;
        this.state.drafts.splice(index, 1);
        this.emit();
    }

    setDraftNote(index: number, note: string): void {
        const draft = this.state.drafts[index];
        if (!draft) return;
        draft.note = note;
        this.emit();
    }

    setComment(text: string): void {
        this.state.comment = text;
        this.emit();
    }

    /** Post the verdict. Re-entry while a submit is in flight is a no-op,
     * which is what turns a double-click into a single stored verdict. */
    async submit(judgment: Judgment): Promise<void> {
        const { session, image, phase } = this.state;
        if (!session || !image || phase !== "judging") return;
        this.state.phase = "submitting";
        this.state.notice = null;
        this.emit();
        try {
            await this.api.submitVerdict(session.session_id, {
                image_id: image.image_id,
                judgment,
                regions: this.state.drafts.slice(),
                comment: this.state.comment || undefined,
            });
        } catch (err) {
            if (err instanceof ConflictError) {
                // someone already judged this one in this session; the
                // stored verdict stands, so just move on
                this.state.drafts = [];
                this.state.comment = "";
                await this.fetchNext();
                if (this.state.failures === 0) {
                    this.state.notice = "this image was already judged; moving on";
                    this.emit();
                }
                return;
            }
            if (err instanceof ValidationError) {
                this.state.phase = "judging";
                this.state.notice = (err as Error).message;
                this.emit();
                return;
            }
            this.state.phase = "judging";
            this.state.notice = `submit failed: ${(err as Error).message}`;
            this.emit();
            return;
        }
        this.state.drafts = [];
        this.state.comment = "";
        await this.fetchNext();
    }
}
