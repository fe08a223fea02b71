"""``qkdpqc`` command line.

Exit codes: 0 success, 1 failed check, 2 usage or input error, 3 transport error.
The PQC provider comes from the ``QKDPQC_PROVIDER`` environment variable.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import hybridsig, qkd, ranval, wire
from .channel import ChannelError, TcpListener, tcp_connect
from .hybridkx import HandshakeTranscript, KxConfig, Method, make_client, make_server, run_handshake
from .pipelines import SOURCES, make_source
from .pqcprov import (DSA_PROFILES, ML_KEM_512, DsaKeyPair, ProviderError, ecdh_keygen,
                      ecdh_shared_x, get_provider)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 already; keep the message terse
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _protocol(text: str) -> qkd.Protocol:
    try:
        return qkd.Protocol(text.lower())
    except ValueError:
        raise argparse.ArgumentTypeError(f"protocol must be bb84 or e91, got {text!r}") from None


# --- qkd -------------------------------------------------------------------

def cmd_qkd(args: argparse.Namespace) -> int:
    cfg = qkd.QkdSessionConfig(args.protocol, args.n, args.seed, qkd.Adversary(args.adversary))
    a_key, b_key, transcript = qkd.run_session(cfg, transport=args.transport)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"qkd-{cfg.protocol.value}"
    (out / f"{stem}-transcript.csv").write_text(
        "index,alice_control,bob_control,alice_bit,bob_bit,kept\n" + qkd.export_transcript(transcript))
    (out / f"{stem}-key.hex").write_text(a_key.hex() + "\n")
    r3 = None
    if cfg.target_bits >= qkd.KEY_BITS:
        r3 = qkd.derive_r3(a_key.bits, cfg.target_bits)
        (out / f"{stem}-r3.hex").write_text(r3.hex() + "\n")
    qber = qkd.disagreement_rate(a_key.bits, b_key.bits)
    print(f"protocol={cfg.protocol.value} rounds={cfg.rounds} kept={a_key.rounds_kept} "
          f"kept_fraction={a_key.rounds_kept / cfg.rounds:.4f} target={cfg.target_bits}")
    print(f"qber={qber:.4f} adversary={cfg.adversary.value}")
    if r3 is not None:
        print(f"r3={r3.hex()}")
    if cfg.adversary is qkd.Adversary.NONE and qber != 0.0:
        print("sifted keys disagree", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# --- kx --------------------------------------------------------------------

def _digest(key: bytes) -> str:
    return hashlib.sha256(key).hexdigest()


def _print_transcript(role: str, t: HandshakeTranscript) -> None:
    print(f"{role} method={t.method.value} kdf_message_len={len(t.kdf_message)} "
          f"sifted_bits={t.sifted.rounds_kept if t.sifted else 0} "
          f"session_key_sha256={_digest(t.session_key)}")


def _write_kx(path: Optional[str], transcripts: Sequence[tuple[str, HandshakeTranscript]]) -> None:
    if not path:
        return
    payload = {role: {
        "method": t.method.value,
        "r1": t.r1.hex() if t.r1 else None,
        "r2": t.r2.hex(),
        "r3": t.r3.hex(),
        "kdf_message_len": len(t.kdf_message),
        "session_key": t.session_key.hex(),
    } for role, t in transcripts}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def cmd_kx(args: argparse.Namespace) -> int:
    cfg = KxConfig(Method(args.method),
                   qkd.QkdSessionConfig(args.protocol, args.n, args.seed), args.curve)
    if args.listen and args.connect:
        raise UsageError("give at most one of --listen and --connect")
    if (args.listen or args.connect) and args.transport != "tcp":
        raise UsageError("--listen/--connect need --transport tcp")
    provider = get_provider()
    if args.listen:
        listener = TcpListener(args.listen)
        print(f"listening on {listener.address}", flush=True)
        try:
            chan = listener.accept(args.timeout)
        finally:
            listener.close()
        with chan:
            t = make_server(cfg, provider).run(chan)
        _print_transcript("server", t)
        _write_kx(args.transcript, [("server", t)])
        return EXIT_OK
    if args.connect:
        with tcp_connect(args.connect, args.timeout) as chan:
            t = make_client(cfg, provider).run(chan)
        _print_transcript("client", t)
        _write_kx(args.transcript, [("client", t)])
        return EXIT_OK
    client, server = run_handshake(cfg, provider=provider, transport=args.transport)
    _print_transcript("client", client)
    _print_transcript("server", server)
    _write_kx(args.transcript, [("client", client), ("server", server)])
    if client.session_key != server.session_key:
        print("session keys differ", file=sys.stderr)
        return EXIT_FAIL
    print("keys match")
    return EXIT_OK


# --- certificates ----------------------------------------------------------

_CA_FILE = "ca.json"
_STORE_FILE = "store.csv"


def _save_ca(ca_dir: Path, ca: hybridsig.CertificateAuthority) -> None:
    info = ca.qk_info
    (ca_dir / _CA_FILE).write_text(json.dumps({
        "profile": ca.profile,
        "public_key": ca.keypair.public_key.hex(),
        "private_key": ca.keypair.private_key.hex(),
        "qk_info": {"protocol": info.protocol.value, "quantum": info.quantum_endpoint,
                    "classical": info.classical_endpoint},
    }, indent=1, sort_keys=True) + "\n")
    ca.store.save(ca_dir / _STORE_FILE)


def _load_ca(ca_dir: Path, rng) -> hybridsig.CertificateAuthority:
    try:
        data = json.loads((ca_dir / _CA_FILE).read_text())
        keypair = DsaKeyPair(bytes.fromhex(data["public_key"]), bytes.fromhex(data["private_key"]),
                             data["profile"])
        q = data["qk_info"]
        info = hybridsig.QkInfo(q["quantum"], q["classical"], qkd.Protocol(q["protocol"]))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot load CA from {ca_dir}: {exc}") from exc
    store_path = ca_dir / _STORE_FILE
    store = hybridsig.CaStore.load(store_path) if store_path.exists() else hybridsig.CaStore()
    return hybridsig.CertificateAuthority(keypair, info, get_provider(), rng, store)


def cmd_cert_issue(args: argparse.Namespace) -> int:
    ca_dir = Path(args.ca_dir)
    provider = get_provider()
    if (ca_dir / _CA_FILE).exists():
        ca = _load_ca(ca_dir, None)
    else:
        ca_dir.mkdir(parents=True, exist_ok=True)
        info = hybridsig.QkInfo(args.quantum_endpoint, args.classical_endpoint, args.protocol)
        ca = hybridsig.CertificateAuthority.create(args.ca_profile, info, provider,
                                                   qkd.party_rng(args.seed, "ca-key"))
        print(f"created CA profile={ca.profile} in {ca_dir}")
    ca.rng = qkd.party_rng(args.seed, f"issue/{len(ca.store) + 1}")
    subject_key = provider.dsa_keygen(args.spki_alg, qkd.party_rng(args.seed, "subject"))
    cert, record = ca.issue_certificate(hybridsig.SigningRequest(args.subject, args.spki_alg,
                                                                 subject_key.public_key))
    _save_ca(ca_dir, ca)
    out = Path(args.out or ca_dir / f"cert-{cert.serial}.bin")
    out.write_bytes(hybridsig.encode_certificate(cert))
    out.with_suffix(".txt").write_text(hybridsig.certificate_text(cert))
    print(f"issued serial={cert.serial} sig_field_len={len(cert.rcs)} "
          f"stored_signature_len={len(record.signature_v)} file={out}")
    return EXIT_OK


def cmd_cert_verify(args: argparse.Namespace) -> int:
    ca = _load_ca(Path(args.ca_dir), None)
    try:
        cert = hybridsig.decode_certificate(Path(args.cert).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read certificate: {exc}") from exc
    try:
        ok = hybridsig.verify_flow(cert, ca, n=args.n, seed=args.seed, transport=args.transport)
    except hybridsig.UnknownSerial as exc:
        print(f"verification failed: {exc}")
        return EXIT_FAIL
    print(f"serial={cert.serial} subject={cert.subject} valid={str(ok).lower()}")
    return EXIT_OK if ok else EXIT_FAIL


# --- entropy ---------------------------------------------------------------

def cmd_entropy(args: argparse.Namespace) -> int:
    if bool(args.source) == bool(args.input):
        raise UsageError("give exactly one of --source and --input")
    if args.input:
        try:
            matrix = ranval.RestartMatrix.load(args.input)
        except OSError as exc:
            raise UsageError(f"cannot read {args.input}: {exc}") from exc
        except ValueError as exc:
            raise UsageError(f"malformed matrix file: {exc}") from exc
    else:
        matrix = ranval.collect_matrix(make_source(args.source, args.seed, n=args.n), args.rows)
        if args.matrix_out:
            Path(args.matrix_out).write_text(matrix.to_hex_lines())
    report = ranval.run_suite(matrix)
    body = report.to_json() + "\n" if args.json else report.to_text()
    if args.report:
        Path(args.report).write_text(body)
    if args.quantiles:
        Path(args.quantiles).write_text(report.quantiles_csv())
    for test in ranval.TESTS:
        rows = report.failing_rows(test)
        shown = ",".join(map(str, rows[:20])) + (",..." if len(rows) > 20 else "")
        print(f"{test}: {len(rows)} failing rows{' [' + shown + ']' if rows else ''}")
    print(f"rows={matrix.rows} overall={'pass' if report.passed else 'fail'}")
    return EXIT_OK if report.passed else EXIT_FAIL


# --- bench -----------------------------------------------------------------

def _time(fn: Callable[[int], object], iterations: int) -> list[float]:
    samples = []
    for i in range(iterations):
        start = time.perf_counter()
        fn(i)
        samples.append((time.perf_counter() - start) * 1000.0)
    return samples


def bench_rows(iterations: int, seed: Optional[int], n: int = qkd.DEFAULT_N) -> list[tuple[str, float, float]]:
    """``(name, median_ms, mean_ms)`` per primitive; hybrids are sums of components."""
    provider = get_provider()

    def ecdh(curve: str) -> Callable[[int], object]:
        def run(i: int) -> None:
            a = ecdh_keygen(curve, qkd.party_rng(seed, f"bench/{curve}/{i}/a"))
            b = ecdh_keygen(curve, qkd.party_rng(seed, f"bench/{curve}/{i}/b"))
            ecdh_shared_x(a, b.public_point)
            ecdh_shared_x(b, a.public_point)
        return run

    kem: dict[str, list[float]] = {"keygen": [], "encap": [], "decap": []}

    def ml_kem(i: int) -> None:
        rng = qkd.party_rng(seed, f"bench/kem/{i}")
        t0 = time.perf_counter()
        kp = provider.kem_keygen(ML_KEM_512, rng)
        t1 = time.perf_counter()
        ct, _ = provider.kem_encapsulate(kp.public_key, rng, ML_KEM_512)
        t2 = time.perf_counter()
        provider.kem_decapsulate(ct, kp.private_key, ML_KEM_512)
        t3 = time.perf_counter()
        for name, dt in zip(kem, (t1 - t0, t2 - t1, t3 - t2)):
            kem[name].append(dt * 1000.0)

    def qkd_run(protocol: qkd.Protocol) -> Callable[[int], object]:
        def run(i: int) -> None:
            s = None if seed is None else seed * 1_000_003 + i
            qkd.run_session(qkd.QkdSessionConfig(protocol, n, s))
        return run

    samples = {
        "ecdh-nist-p256": _time(ecdh("NIST-P-256"), iterations),
        "ecdh-brainpool-p256": _time(ecdh("Brainpool-P-256"), iterations),
    }
    _time(ml_kem, iterations)
    samples["ml-kem-512.keygen"] = kem["keygen"]
    samples["ml-kem-512.encap"] = kem["encap"]
    samples["ml-kem-512.decap"] = kem["decap"]
    samples["ml-kem-512"] = [sum(x) for x in zip(*kem.values())]
    samples["qkd-bb84"] = _time(qkd_run(qkd.Protocol.BB84), iterations)
    samples["qkd-e91"] = _time(qkd_run(qkd.Protocol.E91), iterations)
    samples["hybrid-method1"] = [a + b for a, b in zip(samples["ml-kem-512"], samples["qkd-bb84"])]
    samples["hybrid-method2"] = [a + b for a, b in zip(samples["hybrid-method1"], samples["ecdh-nist-p256"])]
    return [(name, statistics.median(v), statistics.fmean(v)) for name, v in samples.items()]


def cmd_bench(args: argparse.Namespace) -> int:
    rows = bench_rows(args.iterations, args.seed, args.n)
    lines = ["protocol,median_ms,mean_ms"] + [f"{name},{med:.3f},{mean:.3f}" for name, med, mean in rows]
    if args.csv:
        Path(args.csv).write_text("\n".join(lines) + "\n")
    width = max(len(name) for name, _, _ in rows)
    print(f"{'protocol':<{width}}  {'median_ms':>10}  {'mean_ms':>10}")
    for name, med, mean in rows:
        print(f"{name:<{width}}  {med:>10.3f}  {mean:>10.3f}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qkdpqc", description="Simulated QKD with post-quantum hybrids.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp: argparse.ArgumentParser, n: bool = True) -> None:
        sp.add_argument("--seed", type=int, default=None, help="fix all non-timing randomness")
        if n:
            sp.add_argument("--n", type=_positive, default=qkd.DEFAULT_N, help="QKD target bits")

    q = sub.add_parser("qkd", help="run one QKD session")
    common(q)
    q.add_argument("--protocol", type=_protocol, default=qkd.Protocol.BB84,
                   metavar="{bb84,e91}")
    q.add_argument("--adversary", choices=[a.value for a in qkd.Adversary], default="none")
    q.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    q.add_argument("--out-dir", default=".")
    q.set_defaults(func=cmd_qkd)

    k = sub.add_parser("kx", help="run a hybrid key exchange")
    common(k)
    k.add_argument("--method", type=int, choices=(1, 2), default=1)
    k.add_argument("--protocol", type=_protocol, default=qkd.Protocol.BB84,
                   metavar="{bb84,e91}")
    k.add_argument("--curve", choices=("NIST-P-256", "Brainpool-P-256"), default="NIST-P-256")
    k.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    k.add_argument("--listen", metavar="HOST:PORT", help="tcp: run the server side")
    k.add_argument("--connect", metavar="HOST:PORT", help="tcp: run the client side")
    k.add_argument("--timeout", type=float, default=30.0)
    k.add_argument("--transcript", metavar="PATH")
    k.set_defaults(func=cmd_kx)

    ci = sub.add_parser("cert-issue", help="issue a hybrid certificate")
    common(ci, n=False)
    ci.add_argument("--ca-dir", required=True)
    ci.add_argument("--ca-profile", choices=DSA_PROFILES, default="ML-DSA-44")
    ci.add_argument("--subject", required=True)
    ci.add_argument("--spki-alg", choices=DSA_PROFILES, default="ML-DSA-44")
    ci.add_argument("--protocol", type=_protocol, default=qkd.Protocol.BB84,
                   metavar="{bb84,e91}")
    ci.add_argument("--quantum-endpoint", default="quantum://127.0.0.1:7001")
    ci.add_argument("--classical-endpoint", default="127.0.0.1:7002")
    ci.add_argument("--out", metavar="PATH")
    ci.set_defaults(func=cmd_cert_issue)

    cv = sub.add_parser("cert-verify", help="verify a certificate against its CA")
    common(cv)
    cv.add_argument("--ca-dir", required=True)
    cv.add_argument("--cert", required=True)
    cv.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    cv.set_defaults(func=cmd_cert_verify)

    e = sub.add_parser("entropy", help="validate a restart matrix")
    common(e)
    e.add_argument("--source", choices=SOURCES)
    e.add_argument("--input", metavar="PATH", help=".hex/.txt hex lines, otherwise raw binary")
    e.add_argument("--rows", type=_positive, default=ranval.ROWS)
    e.add_argument("--report", metavar="PATH")
    e.add_argument("--json", action="store_true", help="structured report")
    e.add_argument("--quantiles", metavar="PATH", help="box-plot quantiles CSV")
    e.add_argument("--matrix-out", metavar="PATH", help="save the collected matrix as hex lines")
    e.set_defaults(func=cmd_entropy)

    b = sub.add_parser("bench", help="time each key-exchange primitive")
    common(b)
    b.add_argument("--iterations", type=_positive, default=10)
    b.add_argument("--csv", metavar="PATH")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (wire.DecodeError, hybridsig.CertificateError, ProviderError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ChannelError, OSError) as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
