#!/usr/bin/env python3
"""Reference interpreter worker for the canvas orchestrator.

Speaks worker protocol "1": newline-delimited JSON requests on stdin,
one response per request on stdout, after a {"ready": "1"} handshake line.
User code runs in one persistent namespace; snapshot/restore move that
namespace between workers so the orchestrator can fork sessions.
"""

import ast
import base64
import binascii
import builtins
import contextlib
import importlib
import io
import json
import os
import pickle
import sys
import traceback
import types

PROTOCOL = "1"
MAX_FRAME = 64 * 1024 * 1024
# Room left for JSON escaping and the envelope when truncating outputs.
OUTPUT_BUDGET = 48 * 1024 * 1024
HELPERS = ("canvas_display",)
OPS = ("execute", "snapshot", "restore", "ping", "shutdown")


class ProtocolError(Exception):
    pass


def _error_payload(exc, skip_frames=0):
    tb = traceback.TracebackException.from_exception(exc)
    frames = list(tb.stack)[skip_frames:]
    tb.stack = traceback.StackSummary.from_list(frames)
    return {
        "etype": type(exc).__name__,
        "message": str(exc),
        "traceback": "".join(tb.format()),
    }


class Interpreter:
    def __init__(self):
        self.namespace = {}
        self._rich = None
        self.reset({})

    def reset(self, bindings):
        ns = {"__name__": "__main__", "__builtins__": builtins}
        ns.update(bindings)
        ns["canvas_display"] = self._display
        self.namespace = ns

    def _display(self, mime, data):
        if self._rich is None:
            raise RuntimeError("canvas_display can only be called while a cell executes")
        if mime == "image/png" and isinstance(data, (bytes, bytearray)):
            data = base64.b64encode(bytes(data)).decode("ascii")
        elif mime == "application/json" and not isinstance(data, str):
            data = json.dumps(data)
        elif not isinstance(data, str):
            data = str(data)
        self._rich.append({"mime": str(mime), "data": data})

    def execute(self, code):
        out, err = io.StringIO(), io.StringIO()
        self._rich = []
        result_repr = None
        error = None
        try:
            tree = ast.parse(code, "<cell>", "exec")
        except SyntaxError as exc:
            error = _error_payload(exc)
            tree = None
        if tree is not None:
            last = None
            if tree.body and isinstance(tree.body[-1], ast.Expr):
                last = ast.Expression(tree.body.pop().value)
            saved_stdin = sys.stdin
            sys.stdin = io.StringIO()
            try:
                with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
                    exec(compile(tree, "<cell>", "exec"), self.namespace)
                    if last is not None:
                        value = eval(compile(last, "<cell>", "eval"), self.namespace)
                        if value is not None:
                            result_repr = repr(value)
            except BaseException as exc:  # user code must never take the worker down
                if isinstance(exc, SystemExit):
                    exc = RuntimeError("SystemExit is not allowed inside a cell")
                error = _error_payload(exc, skip_frames=1)
            finally:
                sys.stdin = saved_stdin
        rich, self._rich = self._rich, None
        stdout, stderr = out.getvalue(), err.getvalue()
        stdout, stderr, result_repr = _fit(stdout, stderr, result_repr)
        payload = {
            "stdout": stdout,
            "stderr": stderr,
            "result_repr": result_repr,
            "rich": rich,
            "error": error,
        }
        return error is None, payload

    def user_bindings(self):
        for name, value in self.namespace.items():
            if name.startswith("__") or name in HELPERS:
                continue
            yield name, value

    def snapshot(self):
        modules, values, skipped = {}, {}, []
        for name, value in self.user_bindings():
            if isinstance(value, types.ModuleType):
                modules[name] = value.__name__
                continue
            try:
                pickle.dumps(value, protocol=4)
            except Exception:
                skipped.append(name)
                continue
            values[name] = value
        # One pickle for all values keeps aliasing between names intact.
        blob = pickle.dumps({"modules": modules, "values": pickle.dumps(values, protocol=4)}, protocol=4)
        return {"blob": base64.b64encode(blob).decode("ascii"), "skipped": sorted(skipped)}

    def restore(self, blob):
        raw = base64.b64decode(blob.encode("ascii"), validate=True)
        state = pickle.loads(raw)
        values = pickle.loads(state["values"])
        skipped = []
        bindings = dict(values)
        for name, path in state["modules"].items():
            try:
                bindings[name] = importlib.import_module(path)
            except Exception:
                skipped.append(name)
        self.reset(bindings)
        return {"skipped": sorted(skipped)}


def _fit(stdout, stderr, result_repr):
    total = len(stdout) + len(stderr) + len(result_repr or "")
    if total <= OUTPUT_BUDGET:
        return stdout, stderr, result_repr
    note = "\n[output truncated: exceeded the frame size limit]\n"
    share = OUTPUT_BUDGET // 3
    return stdout[:share], stderr[:share] + note, None if result_repr is None else result_repr[:share]


def _validate(request, last_id):
    if not isinstance(request, dict):
        raise ProtocolError("request must be an object")
    rid = request.get("id")
    if not isinstance(rid, int) or isinstance(rid, bool) or rid <= 0:
        raise ProtocolError("id must be a positive integer")
    if rid <= last_id:
        raise ProtocolError("request ids must increase")
    if request.get("op") not in OPS:
        raise ProtocolError("unknown op")
    if not isinstance(request.get("payload"), dict):
        raise ProtocolError("payload must be an object")
    return rid


def serve(inp, out):
    def send(message):
        out.write(json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8") + b"\n")
        out.flush()

    interp = Interpreter()
    send({"ready": PROTOCOL})
    last_id = 0
    while True:
        line = inp.readline(MAX_FRAME + 1)
        if not line:
            return 1  # stream closed without a shutdown request
        if len(line) > MAX_FRAME or not line.endswith(b"\n"):
            raise ProtocolError("oversize or truncated frame")
        request = json.loads(line)
        rid = last_id = _validate(request, last_id)
        op, payload = request["op"], request["payload"]
        if op == "ping":
            send({"id": rid, "ok": True, "payload": {"protocol": PROTOCOL}})
        elif op == "shutdown":
            send({"id": rid, "ok": True, "payload": {}})
            return 0
        elif op == "execute":
            code = payload.get("code")
            if not isinstance(code, str):
                raise ProtocolError("execute needs string code")
            ok, result = interp.execute(code)
            send({"id": rid, "ok": ok, "payload": result})
        elif op == "snapshot":
            send({"id": rid, "ok": True, "payload": interp.snapshot()})
        elif op == "restore":
            blob = payload.get("blob")
            if not isinstance(blob, str):
                raise ProtocolError("restore needs string blob")
            try:
                result = interp.restore(blob)
            except (binascii.Error, ValueError, pickle.UnpicklingError, EOFError, KeyError, TypeError) as exc:
                send({"id": rid, "ok": False, "payload": {"error": _error_payload(exc)}})
            else:
                send({"id": rid, "ok": True, "payload": result})


def main():
    # The protocol owns private copies of the original descriptors; fd 0
    # reads /dev/null and fd 1 goes to stderr so stray writes from user code
    # cannot corrupt the frame stream.
    proto_in = os.fdopen(os.dup(0), "rb", buffering=0)
    proto_out = os.fdopen(os.dup(1), "wb")
    devnull = os.open(os.devnull, os.O_RDONLY)
    os.dup2(devnull, 0)
    os.close(devnull)
    os.dup2(2, 1)
    inp = io.BufferedReader(proto_in)
    try:
        return serve(inp, proto_out)
    except (ProtocolError, ValueError) as exc:
        sys.stderr.write("ccanvas_worker: protocol violation: %s\n" % exc)
        return 2
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
