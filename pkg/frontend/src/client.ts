// Gateway connection: binary WebSocket carrying wire frames in both
// directions. Reconnects with backoff; on reconnect the next STATUS message
// restores mode/phase/travel. An idle console sends nothing.

import { Message, StreamDecoder } from "./protocol.js";
import { ConsoleState } from "./state.js";

export class GatewayClient {
  private ws: WebSocket | null = null;
  private decoder = new StreamDecoder();
  private backoffMs = 500;
  private closed = false;

  constructor(
    readonly url: string,
    private readonly state: ConsoleState,
    private readonly onMessage: (msg: Message) => void,
  ) {}

  connect(): void {
    if (this.closed) return;
    const ws = new WebSocket(this.url);
    ws.binaryType = "arraybuffer";
    ws.onopen = () => {
      this.state.connected = true;
      this.backoffMs = 500;
    };
    ws.onmessage = (ev) => {
      for (const msg of this.decoder.feed(new Uint8Array(ev.data as ArrayBuffer))) {
        if (msg.type === "status") this.state.applyStatus(msg);
        if (msg.type === "trace") this.state.applyTrace(msg);
        this.onMessage(msg);
      }
    };
    ws.onclose = () => {
      this.state.connected = false;
      this.ws = null;
      if (!this.closed) {
        setTimeout(() => this.connect(), this.backoffMs);
        this.backoffMs = Math.min(this.backoffMs * 2, 8000);
      }
    };
    ws.onerror = () => ws.close();
    this.ws = ws;
  }

  send(frame: Uint8Array): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(frame);
    }
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
