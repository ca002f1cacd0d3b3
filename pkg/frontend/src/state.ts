import type { Restriction } from "./types";

type DistributiveOmit<T, K extends PropertyKey> = T extends unknown ? Omit<T, K> : never;

/** A restriction as the caller supplies it: the id is optional. */
export type NewRestriction = DistributiveOmit<Restriction, "id"> & { id?: string };

/** The unordered, individually-removable restriction set. */
export class RestrictionSet {
  private byId = new Map<string, Restriction>();
  private counter = 0;

  add(restriction: NewRestriction): Restriction {
    const id = restriction.id || `r${++this.counter}`;
    const full = { ...restriction, id } as Restriction;
    this.byId.set(id, full);
    return full;
  }

  remove(id: string): boolean {
    return this.byId.delete(id);
  }

  list(): Restriction[] {
    return [...this.byId.values()];
  }

  forField(field: string): Restriction[] {
    return this.list().filter((r) => "field" in r && r.field === field);
  }
}

/** Monotone-UI guard: resolves stale responses to undefined so an older
 * in-flight request can never overwrite a newer one. */
export class LatestOnly {
  private seq = 0;

  async run<T>(work: () => Promise<T>): Promise<T | undefined> {
    const ticket = ++this.seq;
    const result = await work();
    return ticket === this.seq ? result : undefined;
  }
}
