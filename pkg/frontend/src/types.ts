/** Wire types for the editing API (v1). */

export interface EditRequest {
  instruction: string;
  styles: string[];
  exemplar_ids: string[];
  alphas?: number[];
  blend_weights?: number[];
  s_image: number;
  s_text: number;
  rescale_phi: number;
  seed?: number;
}

export type JobStatus = 'QUEUED' | 'RUNNING' | 'DONE' | 'FAILED';

export interface JobView {
  job_id: string;
  status: JobStatus;
  request: EditRequest;
  result_url?: string;
  error?: string;
}

export interface SubmitResponse {
  job_id: string;
  deduplicated: boolean;
}

export interface StyleInfo {
  name: string;
  prompt_format: string;
}
