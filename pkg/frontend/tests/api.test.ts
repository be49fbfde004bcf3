import { describe, expect, it } from "vitest";

import { ApiError, DesignApi } from "../src/api.js";

interface Recorded {
  url: string;
  method: string;
  body?: unknown;
}

function stubFetch(status: number, payload: unknown, log: Recorded[]): typeof fetch {
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const body = typeof init?.body === "string" ? JSON.parse(init.body) : init?.body;
    log.push({ url: String(input), method: init?.method ?? "GET", body });
    return {
      ok: status >= 200 && status < 300,
      status,
      statusText: `status ${status}`,
      json: async () => payload,
    } as Response;
  }) as typeof fetch;
}

describe("DesignApi", () => {
  it("creates sessions against the versioned prefix", async () => {
    const log: Recorded[] = [];
    const api = new DesignApi("http://svc:9000/", stubFetch(200, { id: "abc" }, log));
    const id = await api.createSession();
    expect(id).toBe("abc");
    expect(log[0].url).toBe("http://svc:9000/v1/sessions");
    expect(log[0].method).toBe("POST");
  });

  it("sends canonical classes in foreground payloads", async () => {
    const log: Recorded[] = [];
    const api = new DesignApi("http://svc", stubFetch(200, { elements: [], element_count: 0 }, log));
    await api.putForeground("sid", [{ type: "text", class: "disclaimer", string: "terms" }], 4);
    expect(log[0].url).toBe("http://svc/v1/sessions/sid/foreground");
    expect(log[0].method).toBe("PUT");
    expect(log[0].body).toEqual({
      elements: [{ type: "text", class: "disclaimer", string: "terms" }],
      button_radius: 4,
    });
  });

  it("requests six candidates by default", async () => {
    const log: Recorded[] = [];
    const api = new DesignApi("http://svc", stubFetch(200, { candidates: [] }, log));
    await api.requestCandidates("sid");
    expect(log[0].url).toBe("http://svc/v1/sessions/sid/candidates?count=6");
  });

  it("patches one element box", async () => {
    const log: Recorded[] = [];
    const api = new DesignApi("http://svc", stubFetch(200, { layout: [] }, log));
    await api.patchBox("sid", 2, 5, [0.1, 0.2, 0.3, 0.4]);
    expect(log[0].method).toBe("PATCH");
    expect(log[0].body).toEqual({ candidate: 2, element_id: 5, box: [0.1, 0.2, 0.3, 0.4] });
  });

  it("raises ApiError with the server detail", async () => {
    const api = new DesignApi("http://svc", stubFetch(422, { error: "bad class" }, []));
    await expect(api.createSession()).rejects.toMatchObject({
      name: "ApiError",
      status: 422,
      message: "bad class",
    });
    await expect(api.createSession()).rejects.toBeInstanceOf(ApiError);
  });

  it("builds preview urls", () => {
    const api = new DesignApi("http://svc", stubFetch(200, {}, []));
    expect(api.previewUrl("sid", 3)).toBe("http://svc/v1/sessions/sid/preview/3");
  });
});
