import { describe, expect, it } from 'vitest';

import { ApiClient, ApiRequestError, NetworkError } from '../src/api.js';

function fakeFetch(status: number, body: unknown) {
  return async () =>
    new Response(JSON.stringify(body), {
      status,
      headers: { 'Content-Type': 'application/json' },
    });
}

describe('api client', () => {
  it('returns the claimed item', async () => {
    const client = new ApiClient('', fakeFetch(200, { item: { item_id: 'x' } }));
    const item = await client.claimNext('ann-1');
    expect(item?.item_id).toBe('x');
  });

  it('returns null on an empty queue', async () => {
    const client = new ApiClient('', fakeFetch(200, { item: null }));
    expect(await client.claimNext('ann-1')).toBeNull();
  });

  it('encodes the annotator id', async () => {
    let seen = '';
    const client = new ApiClient('', async (input: string) => {
      seen = input;
      return new Response(JSON.stringify({ item: null }), { status: 200 });
    });
    await client.claimNext('ann/1 x');
    expect(seen).toBe('/api/queue/next?annotator=ann%2F1%20x');
  });

  it('raises a typed error with the server ApiError body', async () => {
    const client = new ApiClient('', fakeFetch(409, { code: 'conflict', message: 'lease expired' }));
    const err = await client
      .submitAnnotation('it-1', {
        annotator_id: 'a',
        correctness: 5,
        clarity: 5,
        logicalness: 3,
        missed_entities: 0,
        missed_relations: 0,
        hallucinated_entities: 0,
        hallucinated_relations: 0,
        edited_explanation: null,
      })
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiRequestError);
    expect((err as ApiRequestError).body.code).toBe('conflict');
    expect((err as ApiRequestError).status).toBe(409);
  });

  it('wraps transport failures as NetworkError', async () => {
    const client = new ApiClient('', async () => {
      throw new TypeError('fetch failed');
    });
    await expect(client.claimNext('a')).rejects.toBeInstanceOf(NetworkError);
  });

  it('tolerates non-JSON error bodies', async () => {
    const client = new ApiClient('', async () => new Response('boom', { status: 502 }));
    const err = await client.stats().catch((e) => e);
    expect(err).toBeInstanceOf(ApiRequestError);
    expect((err as ApiRequestError).body.code).toBe('internal');
  });
});
