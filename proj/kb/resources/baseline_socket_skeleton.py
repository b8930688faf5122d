#!/usr/bin/env python3
# Baseline CPB skeleton. Socket plumbing and framing are done; protocol
# decisions go where the HOLE markers are.
import os
import selectors
import socket
import struct
import sys

DATA, CONTROL = 0x01, 0x02
SUBSCRIBE, UNSUBSCRIBE, PUBLISH, ACK = 1, 2, 3, 4


def env_config():
    fwd_port = os.environ.get("CPB_FORWARD_PORT", "")
    return {
        "protocol": os.environ["CPB_PROTOCOL"],
        "listen": (os.environ.get("CPB_LISTEN_HOST", "127.0.0.1"), int(os.environ["CPB_LISTEN_PORT"])),
        "forward": (os.environ.get("CPB_FORWARD_HOST", "127.0.0.1"), int(fwd_port)) if fwd_port else None,
        "threshold": int(os.environ.get("CPB_THRESHOLD", "5")),
    }


def encode_data(priority, payload):
    return struct.pack(">BBH", DATA, priority, len(payload)) + payload


def encode_ack(acked_type, topic):
    t = topic.encode()
    return struct.pack(">BBH", ACK, acked_type, len(t)) + t


def encode_publish(topic, payload):
    t = topic.encode()
    return struct.pack(">BH", PUBLISH, len(t)) + t + struct.pack(">I", len(payload)) + payload


def split_frames(buf, protocol):
    """Return (frames, rest). Each frame is a tuple; rest is the incomplete tail."""
    frames = []
    while buf:
        kind = buf[0]
        if protocol == "pubsub":
            if kind in (SUBSCRIBE, UNSUBSCRIBE):
                if len(buf) < 3:
                    break
                n = struct.unpack(">H", buf[1:3])[0]
                if len(buf) < 3 + n:
                    break
                frames.append((kind, buf[3:3 + n].decode()))
                buf = buf[3 + n:]
            elif kind == PUBLISH:
                if len(buf) < 3:
                    break
                n = struct.unpack(">H", buf[1:3])[0]
                if len(buf) < 7 + n:
                    break
                plen = struct.unpack(">I", buf[3 + n:7 + n])[0]
                if len(buf) < 7 + n + plen:
                    break
                frames.append((PUBLISH, buf[3:3 + n].decode(), buf[7 + n:7 + n + plen]))
                buf = buf[7 + n + plen:]
            else:
                raise ValueError("bad control_type %d" % kind)
        else:
            if kind == DATA:
                if len(buf) < 4:
                    break
                n = struct.unpack(">H", buf[2:4])[0]
                if len(buf) < 4 + n:
                    break
                frames.append((DATA, buf[1], buf[4:4 + n]))
                buf = buf[4 + n:]
            elif kind == CONTROL:
                if len(buf) < 2:
                    break
                frames.append((CONTROL, buf[1]))
                buf = buf[2:]
            else:
                raise ValueError("bad kind %d" % kind)
    return frames, buf


class State:
    def __init__(self, cfg):
        self.cfg = cfg
        self.threshold = cfg["threshold"]
        self.forward_sock = None
        self.congested = False
        self.subscriptions = {}  # topic -> set of client sockets

    def forward(self, frame):
        if self.forward_sock is not None:
            self.forward_sock.sendall(frame)


def on_data(state, conn, priority, payload):
    # HOLE: admission decision for a DATA packet (stp, cc).
    pass


def on_control(state, conn, flag):
    # HOLE: congestion state update (cc).
    pass


def on_pubsub(state, conn, frame):
    # HOLE: subscribe / unsubscribe / publish handling (pubsub).
    pass


def on_disconnect(state, conn):
    for subs in state.subscriptions.values():
        subs.discard(conn)


def main():
    cfg = env_config()
    state = State(cfg)
    sel = selectors.DefaultSelector()

    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(cfg["listen"])
    server.listen(16)
    sel.register(server, selectors.EVENT_READ, None)

    if cfg["forward"] is not None:
        state.forward_sock = socket.create_connection(cfg["forward"])
        state.forward_sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    buffers = {}
    while True:
        for key, _ in sel.select():
            if key.data is None:
                conn, _ = server.accept()
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                buffers[conn] = b""
                sel.register(conn, selectors.EVENT_READ, "client")
                continue
            conn = key.fileobj
            chunk = conn.recv(65536)
            if not chunk:
                sel.unregister(conn)
                on_disconnect(state, conn)
                del buffers[conn]
                conn.close()
                continue
            frames, buffers[conn] = split_frames(buffers[conn] + chunk, cfg["protocol"])
            for f in frames:
                if cfg["protocol"] == "pubsub":
                    on_pubsub(state, conn, f)
                elif f[0] == DATA:
                    on_data(state, conn, f[1], f[2])
                else:
                    on_control(state, conn, f[1])


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        sys.exit(0)
