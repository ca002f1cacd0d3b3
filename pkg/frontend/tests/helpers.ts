import type { FetchLike } from "../src/api";

export interface RecordedCall {
  method: string;
  path: string;
  body?: unknown;
}

export interface FakeServer {
  fetchFn: FetchLike;
  calls: RecordedCall[];
}

/** Records every request and answers from the handler; no network. */
export function fakeServer(handler: (call: RecordedCall) => { status?: number; payload: unknown }): FakeServer {
  const calls: RecordedCall[] = [];
  const fetchFn: FetchLike = async (input, init) => {
    const call: RecordedCall = {
      method: init?.method ?? "GET",
      path: input,
      body: init?.body ? JSON.parse(init.body as string) : undefined,
    };
    calls.push(call);
    const { status = 200, payload } = handler(call);
    return {
      ok: status >= 200 && status < 300,
      status,
      statusText: String(status),
      json: async () => payload,
    } as unknown as Response;
  };
  return { fetchFn, calls };
}
