/** Thin typed client for the point service HTTP API. */
import { Metadata } from "./hierarchy.js";
import { StatusDoc } from "./status.js";

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  private async json<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) throw new Error(`${path} -> HTTP ${res.status}`);
    return (await res.json()) as T;
  }

  private async bytes(path: string): Promise<ArrayBuffer> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) throw new Error(`${path} -> HTTP ${res.status}`);
    return await res.arrayBuffer();
  }

  getStatus(): Promise<StatusDoc> {
    return this.json<StatusDoc>("/status");
  }

  getMetadata(): Promise<Metadata> {
    return this.json<Metadata>("/metadata");
  }

  getHierarchy(): Promise<ArrayBuffer> {
    return this.bytes("/hierarchy");
  }

  getDecimated(): Promise<ArrayBuffer> {
    return this.bytes("/decimated");
  }

  getNode(name: string): Promise<ArrayBuffer> {
    return this.bytes(`/nodes/${name}`);
  }
}
