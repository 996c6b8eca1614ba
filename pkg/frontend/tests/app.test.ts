// Automated browser-level tests (jsdom): the full search -> ask -> ask ->
// restart journey against a mocked service implementing the HTTP contract,
// plus duplicate-submit prevention and error banners.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { createApp, AppHandles } from "../src/app.js";

const IPV6_CONTEXT = [
  "# IPv6 [APP_CON]",
  "IPv6 -[accomplish]-> large address space (APP_CON -> VALUE)",
  "IPv6 -[accomplish]-> self-configuration capabilities (APP_CON -> FUN)",
  "IPv6 -[influence]-> IPv6 packet header (APP_CON -> STR_COM)",
  "128-bit address -[relevant]-> IPv6 (VALUE -> APP_CON)",
  "IPv6 Header Compression -[relevant]-> IPv6 (FUN -> APP_CON)",
  "Internet Protocol -[relevant]-> IPv6 (FUN -> APP_CON)",
  "NAT66 -[relevant]-> IPv6 (FUN -> APP_CON)",
  "Simplified Configuration -[relevant]-> IPv6 (FUN -> APP_CON)",
].join("\n");

const ANSWERS = [
  "IPv6 is Internet Protocol version 6, the successor to IPv4.",
  "IPv6 uses 128-bit addresses while IPv4 uses 32-bit addresses.",
];

interface RecordedRequest {
  path: string;
  body: Record<string, unknown>;
  apiKey: string | null;
}

function jsonResponse(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** Minimal in-memory stand-in for the QA service. */
function mockService(options: { apiKey?: string } = {}) {
  const apiKey = options.apiKey ?? "ui-test-key";
  const requests: RecordedRequest[] = [];
  const sessions = new Map<string, { history: number; active: boolean }>();
  let sessionCounter = 0;
  let answerCursor = 0;

  const handler = async (input: RequestInfo | URL, init?: RequestInit) => {
    const path = String(input);
    const body = init?.body ? JSON.parse(String(init.body)) : {};
    const headers = new Headers(init?.headers);
    const provided = headers.get("X-API-Key");
    requests.push({ path, body, apiKey: provided });
    if (provided !== apiKey) {
      return jsonResponse(401, { detail: "missing or invalid API key" });
    }
    if (path.endsWith("/search")) {
      const keyword = String(body.keyword ?? "").trim();
      if (!keyword) {
        return jsonResponse(400, { detail: "keyword is empty" });
      }
      const sessionId = `session-${++sessionCounter}`;
      sessions.set(sessionId, { history: 0, active: true });
      const found = keyword.toLowerCase() === "ipv6";
      return jsonResponse(200, {
        session_id: sessionId,
        hits: found ? [{ node_id: "APP_CON_1", name: "IPv6", label: "APP_CON", match_kind: "exact", edges: [] }] : [],
        context_text: found ? IPV6_CONTEXT : "",
        hit_count: found ? 1 : 0,
        no_context: !found,
      });
    }
    if (path.endsWith("/ask")) {
      const session = sessions.get(String(body.session_id));
      if (!session) {
        return jsonResponse(404, { detail: "unknown session" });
      }
      if (!session.active) {
        return jsonResponse(410, { detail: "session has ended" });
      }
      const question = String(body.question ?? "").trim().toLowerCase();
      if (question === "new") {
        session.active = false;
        return jsonResponse(200, { restart: true, ended: true });
      }
      if (question === "exit") {
        session.active = false;
        return jsonResponse(200, { ended: true });
      }
      session.history += 1;
      return jsonResponse(200, {
        answer: ANSWERS[answerCursor++ % ANSWERS.length],
        turn_index: session.history,
        history_length: session.history,
        ungrounded: false,
      });
    }
    return jsonResponse(404, { detail: "no such endpoint" });
  };

  return { handler, requests, sessions };
}

function mountApp(): AppHandles {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app")!;
  return createApp(root, new ApiClient());
}

function setValue(id: string, value: string): void {
  const input = document.getElementById(id) as HTMLInputElement;
  input.value = value;
}

function contextLines(): string[] {
  return Array.from(document.querySelectorAll("#context .context-line")).map(
    (node) => node.textContent ?? "",
  );
}

function transcriptTurns(): Array<{ question: string; answer: string }> {
  return Array.from(document.querySelectorAll("#transcript .turn")).map(
    (node) => ({
      question: node.querySelector(".turn-question")?.textContent ?? "",
      answer: node.querySelector(".turn-answer")?.textContent ?? "",
    }),
  );
}

describe("two-panel console", () => {
  let service: ReturnType<typeof mockService>;

  beforeEach(() => {
    service = mockService();
    vi.stubGlobal("fetch", vi.fn(service.handler));
  });

  afterEach(() => {
    vi.unstubAllGlobals();
    document.body.innerHTML = "";
  });

  it("runs the search -> ask -> ask -> restart journey", async () => {
    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "IPv6");
    await app.searchAction();

    // Context rendered verbatim: header plus exactly 8 relation lines.
    const lines = contextLines();
    expect(lines.join("\n")).toBe(IPV6_CONTEXT);
    const relationLines = lines.filter((line) => !line.startsWith("# "));
    expect(relationLines).toHaveLength(8);
    expect(app.state.phase).toBe("qa");

    setValue("question", "IPv6 is what?");
    await app.askAction();
    setValue("question", "so what differences with IPv4?");
    await app.askAction();

    const turns = transcriptTurns();
    expect(turns).toHaveLength(2);
    expect(turns[0]).toEqual({ question: "IPv6 is what?", answer: ANSWERS[0] });
    expect(turns[1]).toEqual({
      question: "so what differences with IPv4?",
      answer: ANSWERS[1],
    });

    await app.restartAction();
    expect(app.state.phase).toBe("enter_keyword");
    expect(app.state.transcript).toHaveLength(0);
    expect(transcriptTurns()).toHaveLength(0);
    expect(contextLines()).toHaveLength(0);
    // The server session received the restart command.
    const restartCall = service.requests.find(
      (request) => request.body.question === "new",
    );
    expect(restartCall).toBeDefined();
    // Keyword entry is focused again.
    expect(document.activeElement?.id).toBe("keyword");
  });

  it("prevents duplicate submissions while an ask is in flight", async () => {
    let release: (value: Response) => void = () => {};
    const gate = new Promise<Response>((resolve) => {
      release = resolve;
    });
    const fetchMock = vi.fn(
      async (input: RequestInfo | URL, init?: RequestInit) => {
        const path = String(input);
        if (path.endsWith("/ask")) {
          return gate;
        }
        return service.handler(input, init);
      },
    );
    vi.stubGlobal("fetch", fetchMock);

    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "IPv6");
    await app.searchAction();

    setValue("question", "IPv6 is what?");
    const first = app.askAction();
    const askButton = document.getElementById("ask-btn") as HTMLButtonElement;
    expect(app.state.askInFlight).toBe(true);
    expect(askButton.disabled).toBe(true);

    // A second click while in flight must not issue another request.
    askButton.click();
    await app.askAction();
    const askCalls = fetchMock.mock.calls.filter(([input]) =>
      String(input).endsWith("/ask"),
    );
    expect(askCalls).toHaveLength(1);

    release(
      jsonResponse(200, {
        answer: ANSWERS[0],
        turn_index: 1,
        history_length: 1,
      }),
    );
    await first;
    expect(app.state.askInFlight).toBe(false);
    expect(askButton.disabled).toBe(false);
    expect(transcriptTurns()).toHaveLength(1);
  });

  it("validates the keyword client-side without a request", async () => {
    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "   ");
    await app.searchAction();
    expect(service.requests).toHaveLength(0);
    const banner = document.getElementById("search-banner")!;
    expect(banner.classList.contains("hidden")).toBe(false);
    expect(app.state.phase).toBe("enter_keyword");
  });

  it("shows a 401 banner and keeps the phase on a bad key", async () => {
    const app = mountApp();
    setValue("api-key", "wrong-key");
    setValue("keyword", "IPv6");
    await app.searchAction();
    const banner = document.getElementById("search-banner")!;
    expect(banner.textContent).toContain("Unauthorized");
    expect(app.state.phase).toBe("enter_keyword");
  });

  it("offers restart when the session has expired", async () => {
    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "IPv6");
    await app.searchAction();
    // Expire the session server-side.
    const sessionId = app.state.sessionId!;
    service.sessions.get(sessionId)!.active = false;

    setValue("question", "still there?");
    await app.askAction();
    const banner = document.getElementById("ask-banner")!;
    expect(banner.textContent).toContain("Restart");
    expect(transcriptTurns()).toHaveLength(0);
    expect(app.state.phase).toBe("qa");
  });

  it("keeps the transcript unchanged on an upstream failure", async () => {
    const failing = vi.fn(
      async (input: RequestInfo | URL, init?: RequestInit) => {
        if (String(input).endsWith("/ask")) {
          return jsonResponse(502, { detail: "upstream model failure" });
        }
        return service.handler(input, init);
      },
    );
    vi.stubGlobal("fetch", failing);
    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "IPv6");
    await app.searchAction();

    setValue("question", "IPv6 is what?");
    await app.askAction();
    expect(transcriptTurns()).toHaveLength(0);
    const banner = document.getElementById("ask-banner")!;
    expect(banner.classList.contains("hidden")).toBe(false);
  });

  it("restart with no session resets locally without a request", async () => {
    const app = mountApp();
    await app.restartAction();
    expect(service.requests).toHaveLength(0);
    expect(app.state.phase).toBe("enter_keyword");
  });

  it("sends the API key header on every call", async () => {
    const app = mountApp();
    setValue("api-key", "ui-test-key");
    setValue("keyword", "IPv6");
    await app.searchAction();
    setValue("question", "q1");
    await app.askAction();
    expect(service.requests.every((r) => r.apiKey === "ui-test-key")).toBe(true);
  });
});
