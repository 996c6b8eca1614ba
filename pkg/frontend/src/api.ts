// Typed client for the QA service HTTP contract. The API key lives in
// memory only; it is sent as the X-API-Key header on every call.

export interface EdgeOut {
  relation: string;
  neighbor_name: string;
  neighbor_label: string;
  direction: string;
}

export interface HitOut {
  node_id: string;
  name: string;
  label: string;
  match_kind: string;
  edges: EdgeOut[];
}

export interface SearchResponse {
  session_id: string;
  hits: HitOut[];
  context_text: string;
  hit_count: number;
  no_context: boolean;
}

export interface AskResponse {
  answer?: string | null;
  restart?: boolean;
  ended?: boolean;
  turn_index?: number | null;
  history_length?: number | null;
  ungrounded?: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  private apiKey = "";

  constructor(private readonly baseUrl: string = "") {}

  setApiKey(key: string): void {
    this.apiKey = key.trim();
  }

  hasApiKey(): boolean {
    return this.apiKey.length > 0;
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
    };
    if (this.apiKey) {
      headers["X-API-Key"] = this.apiKey;
    }
    const response = await fetch(this.baseUrl + path, {
      method: "POST",
      headers,
      body: JSON.stringify(payload),
    });
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body && body.detail) {
          detail = String(body.detail);
        }
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  search(keyword: string): Promise<SearchResponse> {
    return this.post<SearchResponse>("/search", { keyword });
  }

  ask(sessionId: string, question: string): Promise<AskResponse> {
    return this.post<AskResponse>("/ask", {
      session_id: sessionId,
      question,
    });
  }
}
