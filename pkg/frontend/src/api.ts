/** Thin fetch client for the editing service (v1 endpoints only). */

import { EditRequest, JobView, StyleInfo, SubmitResponse } from './types.js';

export class ApiError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = 'ApiError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly base: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async parseError(resp: Response): Promise<never> {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }

  async submitEdit(
    image: Blob,
    request: EditRequest,
    idempotencyKey?: string,
  ): Promise<SubmitResponse> {
    const form = new FormData();
    form.append('image', image, 'original.png');
    form.append('payload', JSON.stringify(request));
    const headers: Record<string, string> = {};
    if (idempotencyKey) headers['Idempotency-Key'] = idempotencyKey;
    const resp = await this.fetchFn(`${this.base}/v1/edits`, {
      method: 'POST',
      body: form,
      headers,
    });
    if (!resp.ok) await this.parseError(resp);
    return (await resp.json()) as SubmitResponse;
  }

  async getJob(jobId: string): Promise<JobView> {
    const resp = await this.fetchFn(`${this.base}/v1/edits/${jobId}`);
    if (!resp.ok) await this.parseError(resp);
    return (await resp.json()) as JobView;
  }

  /** Poll until the job settles; the job API is poll-only by design. */
  async pollUntilDone(
    jobId: string,
    opts: { intervalMs?: number; timeoutMs?: number } = {},
  ): Promise<JobView> {
    const interval = opts.intervalMs ?? 400;
    const deadline = Date.now() + (opts.timeoutMs ?? 120_000);
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.status === 'DONE' || job.status === 'FAILED') return job;
      if (Date.now() >= deadline) {
        throw new ApiError(408, `job ${jobId} still ${job.status} after timeout`);
      }
      await new Promise((resolve) => setTimeout(resolve, interval));
    }
  }

  async uploadExemplar(image: Blob): Promise<string> {
    const form = new FormData();
    form.append('image', image, 'exemplar.png');
    const resp = await this.fetchFn(`${this.base}/v1/exemplars`, { method: 'POST', body: form });
    if (!resp.ok) await this.parseError(resp);
    const body = (await resp.json()) as { exemplar_id: string };
    return body.exemplar_id;
  }

  async listStyles(): Promise<StyleInfo[]> {
    const resp = await this.fetchFn(`${this.base}/v1/styles`);
    if (!resp.ok) await this.parseError(resp);
    const body = (await resp.json()) as { styles: StyleInfo[] };
    return body.styles;
  }

  resultUrl(job: JobView): string | null {
    return job.result_url ? `${this.base}${job.result_url}` : null;
  }
}
