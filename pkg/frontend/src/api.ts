/**
 * Typed client for the /v1 design service. The studio talks to the backend
 * exclusively through this module; no layout values are ever fabricated
 * client-side.
 */

export type TextClass = "header" | "body" | "disclaimer" | "button";

/** UI labels use the designer-facing wording; payloads stay canonical. */
export const CLASS_LABELS: Record<TextClass, string> = {
  header: "Header text",
  body: "Body text",
  disclaimer: "Footnote / disclaimer text",
  button: "Button text",
};

export interface ForegroundText {
  type: "text";
  class: TextClass;
  string: string;
}

export interface BackgroundMeta {
  blob: string;
  width: number;
  height: number;
}

/** (cy, cx, h, w), all normalized to [0, 1]. */
export type BoxRow = [number, number, number, number];

export interface Candidate {
  layout: BoxRow[];
  element_ids: number[];
  preview_blob: string | null;
  warning: string | null;
}

export interface ExportResult {
  record: {
    id: string;
    background_path: string;
    width: number;
    height: number;
    elements: Array<{
      type: string;
      box: BoxRow;
      class?: TextClass;
      string?: string;
      patch_path?: string;
    }>;
  };
  image_b64: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

export class DesignApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}/v1${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.url(path), init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = (await resp.json()) as { error?: string };
        if (body.error) detail = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async createSession(): Promise<string> {
    const body = await this.request<{ id: string }>("/sessions", { method: "POST" });
    return body.id;
  }

  async uploadBackground(sessionId: string, file: Blob): Promise<BackgroundMeta> {
    const form = new FormData();
    form.append("file", file, "background.png");
    return this.request<BackgroundMeta>(`/sessions/${sessionId}/background`, {
      method: "PUT",
      body: form,
    });
  }

  async putForeground(
    sessionId: string,
    elements: ForegroundText[],
    buttonRadius?: number,
  ): Promise<{ elements: ForegroundText[]; element_count: number }> {
    return this.request(`/sessions/${sessionId}/foreground`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ elements, button_radius: buttonRadius ?? null }),
    });
  }

  async requestCandidates(sessionId: string, count = 6): Promise<Candidate[]> {
    const body = await this.request<{ candidates: Candidate[] }>(
      `/sessions/${sessionId}/candidates?count=${count}`,
      { method: "POST" },
    );
    return body.candidates;
  }

  async select(sessionId: string, indices: number[]): Promise<number[]> {
    const body = await this.request<{ selection: number[] }>(
      `/sessions/${sessionId}/selection`,
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ indices }),
      },
    );
    return body.selection;
  }

  async patchBox(
    sessionId: string,
    candidate: number,
    elementId: number,
    box: BoxRow,
  ): Promise<BoxRow[]> {
    const body = await this.request<{ layout: BoxRow[] }>(`/sessions/${sessionId}/layout`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ candidate, element_id: elementId, box }),
    });
    return body.layout;
  }

  async exportDesign(sessionId: string, candidate: number): Promise<ExportResult> {
    return this.request<ExportResult>(`/sessions/${sessionId}/export`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ candidate }),
    });
  }

  previewUrl(sessionId: string, index: number): string {
    return this.url(`/sessions/${sessionId}/preview/${index}`);
  }
}
