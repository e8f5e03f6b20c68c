// Typed client for the listening-service HTTP API. The UI talks to the
// backend exclusively through this module.

export interface Progress {
  answered: number;
  total: number;
}

export interface SessionState {
  listener_id: string;
  total: number;
  answered: number;
  done: boolean;
}

export interface NextItem {
  done: false;
  item_id: string;
  audio_url: string;
  options: string[];
  progress: Progress;
}

export interface DoneMarker {
  done: true;
  progress: Progress;
}

export type NextResponse = NextItem | DoneMarker;

export interface SubmitResult extends SessionState {
  accepted: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Server answered with a non-2xx status; carries its "error" message. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let message = `HTTP ${res.status}`;
    try {
      const body = (await res.json()) as { error?: string };
      if (body && typeof body.error === "string") message = body.error;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(res.status, message);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  session(token: string): Promise<SessionState> {
    return this.get(`/api/session/${encodeURIComponent(token)}`);
  }

  next(token: string): Promise<NextResponse> {
    return this.get(`/api/next/${encodeURIComponent(token)}`);
  }

  async submit(token: string, itemId: string, option: number): Promise<SubmitResult> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/response`, {
      method: "POST",
      headers: { "Content-Type": "application/json; charset=utf-8" },
      body: JSON.stringify({ token, item_id: itemId, option }),
    });
    return asJson<SubmitResult>(res);
  }

  report(): Promise<unknown> {
    return this.get("/api/report");
  }

  /** The audio URL for the current item; the <audio> element fetches it. */
  audioUrl(item: NextItem): string {
    return `${this.baseUrl}${item.audio_url}`;
  }

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`);
    return asJson<T>(res);
  }
}
