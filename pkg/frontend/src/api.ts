import {
    NextStep,
    SessionInfo,
    VerdictAck,
    VerdictPayload,
} from "./types.js";

export class HttpError extends Error {
    constructor(readonly status: number, message: string) {
        super(message);
        this.name = "HttpError";
    }
}

/** 409: this image already has a stored verdict for the session. */
export class ConflictError extends HttpError {
    constructor(message: string) {
        super(409, message);
        this.name = "ConflictError";
    }
}

/** 400: the server rejected the verdict content itself. */
export class ValidationError extends HttpError {
    constructor(message: string) {
        super(400, message);
        this.name = "ValidationError";
    }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorDetail(response: Response): Promise<string> {
    try {
        const body = await response.json();
        if (body && typeof body.detail === "string") return body.detail;
    } catch {
        // non-JSON error body; fall through to the status line
    }
    return `request failed with status ${response.status}`;
}

async function throwFor(response: Response): Promise<never> {
    const detail = await errorDetail(response);
    if (response.status === 409) throw new ConflictError(detail);
    if (response.status === 400) throw new ValidationError(detail);
    throw new HttpError(response.status, detail);
}

export class ApiClient {
    constructor(
        private readonly baseUrl: string = "",
        private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    ) {}

    private async request(path: string, init?: RequestInit): Promise<Response> {
        const response = await this.fetchFn(this.baseUrl + path, init);
        if (!response.ok) await throwFor(response);
        return response;
    }

    async openSession(raterId: string, poolId: string, seed?: number): Promise<SessionInfo> {
        const body: Record<string, unknown> = { rater_id: raterId, pool_id: poolId };
        if (seed !== undefined) body.seed = seed;
        const response = await this.request("/sessions", {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(body),
        });
        return (await response.json()) as SessionInfo;
    }

    async next(sessionId: string): Promise<NextStep> {
        const response = await this.request(`/sessions/${sessionId}/next`);
        return (await response.json()) as NextStep;
    }

    async submitVerdict(sessionId: string, verdict: VerdictPayload): Promise<VerdictAck> {
        const response = await this.request(`/sessions/${sessionId}/verdicts`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(verdict),
        });
        return (await response.json()) as VerdictAck;
    }

    /** Absolute URL for an image step's PNG. */
    imageUrl(relativeUrl: string): string {
        return this.baseUrl + relativeUrl;
    }
}
