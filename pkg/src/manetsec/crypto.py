"""Cryptographic primitives behind a swappable provider interface.

Two providers implement the same surface:

* :class:`DeterministicProvider` -- a keyed-BLAKE2b construction used by the
  simulator.  Every operation is a pure function of its inputs and the
  explicit random source, so a seeded run is bit-reproducible.  It is NOT a
  real public-key scheme (anyone holding a public key could forge under it);
  it exists to make simulations fast and replayable while honouring the
  behavioural contracts (round trips, wrong-key failures, tamper detection).
* :class:`RealCryptoProvider` -- Ed25519 signatures, X25519+ChaCha20-Poly1305
  hybrid public-key encryption and ChaCha20-Poly1305 symmetric encryption,
  for runs where actual cryptographic strength matters.

The quadratic-residue identification arithmetic (``zk_*``) and the ring
key-agreement step (``dh_contribute``) are provider-independent integer
math and live here as plain functions.
"""

from __future__ import annotations

import hmac
import hashlib
import random
from dataclasses import dataclass
from enum import Enum

import sympy


class CryptoError(Exception):
    """Base class for failures in this module."""


class MalformedKeyError(CryptoError):
    """Key material does not have the provider's expected shape."""


class DecryptionError(CryptoError):
    """Base class for decryption failures."""


class CiphertextAuthenticationError(DecryptionError):
    """Ciphertext failed its integrity check (wrong key or tampering)."""


class MalformedCiphertextError(DecryptionError):
    """Ciphertext is structurally invalid (too short, bad framing)."""


class KeyKind(str, Enum):
    GROUP = "group"
    MEMBER = "member"
    LEADER_RING = "leader_ring"
    SESSION = "session"


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: bytes


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer_hint: str = ""


@dataclass(frozen=True)
class SymmetricKey:
    bytes: bytes
    kind: KeyKind


def _key_bytes(key) -> bytes:
    return key.bytes if isinstance(key, SymmetricKey) else bytes(key)


# ---------------------------------------------------------------------------
# Deterministic simulation provider
# ---------------------------------------------------------------------------

_SEED_LEN = 32
_MAC_LEN = 16
_NONCE_LEN = 16


def _b2(data: bytes, key: bytes = b"", size: int = 32) -> bytes:
    return hashlib.blake2b(data, key=key[:64], digest_size=size).digest()


class DeterministicProvider:
    """Keyed-BLAKE2b stand-ins for hash/sign/encrypt; fully reproducible.

    Public keys are derived from private seeds by hashing, and signatures
    are MACs keyed off the public key, so a holder of the public key could
    compute valid signatures.  Simulated principals only ever use keys that
    are in their legitimate knowledge set, so the behavioural contracts the
    simulator relies on (verification, tamper detection, wrong-key failure)
    all hold.  Do not use outside simulation.
    """

    name = "test_double"
    digest_size = 32
    sym_key_size = 32

    def hash(self, data: bytes) -> bytes:
        return _b2(bytes(data))

    def generate_keypair(self, rng: random.Random) -> KeyPair:
        seed = rng.randbytes(_SEED_LEN)
        return KeyPair(public=_b2(seed, key=b"manetsec.pub"), private=seed)

    def _public_of(self, private: bytes) -> bytes:
        if len(private) != _SEED_LEN:
            raise MalformedKeyError("private key must be a 32-octet seed")
        return _b2(private, key=b"manetsec.pub")

    def sign(self, private: bytes, data: bytes, signer_hint: str = "") -> Signature:
        mac_key = _b2(self._public_of(private), key=b"manetsec.sig")
        return Signature(bytes=_b2(bytes(data), key=mac_key), signer_hint=signer_hint)

    def verify(self, public: bytes, data: bytes, sig: Signature) -> bool:
        if len(public) != 32 or not isinstance(sig, Signature):
            return False
        mac_key = _b2(public, key=b"manetsec.sig")
        return hmac.compare_digest(_b2(bytes(data), key=mac_key), sig.bytes)

    def pk_encrypt(self, public: bytes, plaintext: bytes, rng: random.Random) -> bytes:
        if len(public) != 32:
            raise MalformedKeyError("public key must be 32 octets")
        eph = rng.randbytes(_NONCE_LEN)
        content_key = _b2(public + eph, key=b"manetsec.pkwrap")
        return eph + self._seal(content_key, bytes(plaintext), rng)

    def pk_decrypt(self, private: bytes, ciphertext: bytes) -> bytes:
        ciphertext = bytes(ciphertext)
        if len(ciphertext) < _NONCE_LEN:
            raise MalformedCiphertextError("ciphertext shorter than header")
        eph, sealed = ciphertext[:_NONCE_LEN], ciphertext[_NONCE_LEN:]
        content_key = _b2(self._public_of(private) + eph, key=b"manetsec.pkwrap")
        return self._open(content_key, sealed)

    def generate_symmetric_key(self, rng: random.Random, kind: KeyKind) -> SymmetricKey:
        return SymmetricKey(bytes=rng.randbytes(self.sym_key_size), kind=kind)

    def sym_encrypt(self, key, plaintext: bytes, rng: random.Random) -> bytes:
        return self._seal(_key_bytes(key), bytes(plaintext), rng)

    def sym_decrypt(self, key, ciphertext: bytes) -> bytes:
        return self._open(_key_bytes(key), bytes(ciphertext))

    def _keystream(self, key: bytes, nonce: bytes, length: int) -> bytes:
        blocks = []
        for counter in range((length + 63) // 64):
            blocks.append(_b2(nonce + counter.to_bytes(8, "big"), key=key, size=64))
        return b"".join(blocks)[:length]

    def _seal(self, key: bytes, plaintext: bytes, rng: random.Random) -> bytes:
        nonce = rng.randbytes(_NONCE_LEN)
        body = bytes(a ^ b for a, b in zip(plaintext, self._keystream(key, nonce, len(plaintext))))
        tag = _b2(nonce + body, key=_b2(key, key=b"manetsec.tag"), size=_MAC_LEN)
        return nonce + body + tag

    def _open(self, key: bytes, ciphertext: bytes) -> bytes:
        if len(ciphertext) < _NONCE_LEN + _MAC_LEN:
            raise MalformedCiphertextError("ciphertext shorter than nonce plus tag")
        nonce = ciphertext[:_NONCE_LEN]
        body = ciphertext[_NONCE_LEN:-_MAC_LEN]
        tag = ciphertext[-_MAC_LEN:]
        expect = _b2(nonce + body, key=_b2(key, key=b"manetsec.tag"), size=_MAC_LEN)
        if not hmac.compare_digest(tag, expect):
            raise CiphertextAuthenticationError("ciphertext failed authentication")
        return bytes(a ^ b for a, b in zip(body, self._keystream(key, nonce, len(body))))


# ---------------------------------------------------------------------------
# Real provider (Ed25519 / X25519 / ChaCha20-Poly1305)
# ---------------------------------------------------------------------------


class RealCryptoProvider:
    """Actual cryptography via the ``cryptography`` package.

    Key pairs bundle an Ed25519 signing key with an X25519 key-agreement
    key (32+32 octets on each side).  Public-key encryption is a hybrid:
    an ephemeral X25519 exchange feeds HKDF, and the derived key seals the
    payload with ChaCha20-Poly1305, so arbitrarily long plaintexts work.
    Randomness still comes from the caller's explicit source so seeded
    runs remain reproducible.
    """

    name = "real_crypto"
    digest_size = 32
    sym_key_size = 32

    def __init__(self):
        from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
        from cryptography.hazmat.primitives.ciphers import aead
        from cryptography.hazmat.primitives.kdf.hkdf import HKDF
        from cryptography.hazmat.primitives import hashes
        from cryptography import exceptions as crypto_exceptions

        self._ed25519 = ed25519
        self._x25519 = x25519
        self._aead = aead
        self._hkdf_cls = HKDF
        self._hashes = hashes
        self._invalid_sig = crypto_exceptions.InvalidSignature
        self._invalid_tag = crypto_exceptions.InvalidTag
        self._verify_cache: dict = {}

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(bytes(data)).digest()

    def generate_keypair(self, rng: random.Random) -> KeyPair:
        sign_seed = rng.randbytes(32)
        kex_seed = rng.randbytes(32)
        sign_key = self._ed25519.Ed25519PrivateKey.from_private_bytes(sign_seed)
        kex_key = self._x25519.X25519PrivateKey.from_private_bytes(kex_seed)
        return KeyPair(
            public=self._raw_public(sign_key.public_key()) + self._raw_public(kex_key.public_key()),
            private=sign_seed + kex_seed,
        )

    def _raw_public(self, key) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return key.public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def _split_private(self, private: bytes):
        if len(private) != 64:
            raise MalformedKeyError("private key must be 64 octets (sign seed + kex seed)")
        return private[:32], private[32:]

    def sign(self, private: bytes, data: bytes, signer_hint: str = "") -> Signature:
        sign_seed, _ = self._split_private(private)
        key = self._ed25519.Ed25519PrivateKey.from_private_bytes(sign_seed)
        return Signature(bytes=key.sign(bytes(data)), signer_hint=signer_hint)

    def verify(self, public: bytes, data: bytes, sig: Signature) -> bool:
        if len(public) != 64 or not isinstance(sig, Signature):
            return False
        cache_key = (public[:32], bytes(data), sig.bytes)
        hit = self._verify_cache.get(cache_key)
        if hit is not None:
            return hit
        try:
            pub = self._ed25519.Ed25519PublicKey.from_public_bytes(public[:32])
            pub.verify(sig.bytes, bytes(data))
            ok = True
        except (self._invalid_sig, ValueError):
            ok = False
        if len(self._verify_cache) < 200_000:
            self._verify_cache[cache_key] = ok
        return ok

    def _hybrid_key(self, shared: bytes, eph_public: bytes) -> bytes:
        hkdf = self._hkdf_cls(
            algorithm=self._hashes.SHA256(),
            length=32,
            salt=None,
            info=b"manetsec.hybrid" + eph_public,
        )
        return hkdf.derive(shared)

    def pk_encrypt(self, public: bytes, plaintext: bytes, rng: random.Random) -> bytes:
        if len(public) != 64:
            raise MalformedKeyError("public key must be 64 octets (sign + kex)")
        recipient = self._x25519.X25519PublicKey.from_public_bytes(public[32:])
        eph = self._x25519.X25519PrivateKey.from_private_bytes(rng.randbytes(32))
        eph_pub = self._raw_public(eph.public_key())
        key = self._hybrid_key(eph.exchange(recipient), eph_pub)
        nonce = rng.randbytes(12)
        sealed = self._aead.ChaCha20Poly1305(key).encrypt(nonce, bytes(plaintext), eph_pub)
        return eph_pub + nonce + sealed

    def pk_decrypt(self, private: bytes, ciphertext: bytes) -> bytes:
        ciphertext = bytes(ciphertext)
        if len(ciphertext) < 32 + 12 + 16:
            raise MalformedCiphertextError("hybrid ciphertext too short")
        _, kex_seed = self._split_private(private)
        eph_pub, nonce, sealed = ciphertext[:32], ciphertext[32:44], ciphertext[44:]
        own = self._x25519.X25519PrivateKey.from_private_bytes(kex_seed)
        peer = self._x25519.X25519PublicKey.from_public_bytes(eph_pub)
        key = self._hybrid_key(own.exchange(peer), eph_pub)
        try:
            return self._aead.ChaCha20Poly1305(key).decrypt(nonce, sealed, eph_pub)
        except self._invalid_tag as exc:
            raise CiphertextAuthenticationError("hybrid ciphertext failed authentication") from exc

    def generate_symmetric_key(self, rng: random.Random, kind: KeyKind) -> SymmetricKey:
        return SymmetricKey(bytes=rng.randbytes(self.sym_key_size), kind=kind)

    def sym_encrypt(self, key, plaintext: bytes, rng: random.Random) -> bytes:
        nonce = rng.randbytes(12)
        return nonce + self._aead.ChaCha20Poly1305(_key_bytes(key)).encrypt(
            nonce, bytes(plaintext), b""
        )

    def sym_decrypt(self, key, ciphertext: bytes) -> bytes:
        ciphertext = bytes(ciphertext)
        if len(ciphertext) < 12 + 16:
            raise MalformedCiphertextError("ciphertext shorter than nonce plus tag")
        try:
            return self._aead.ChaCha20Poly1305(_key_bytes(key)).decrypt(
                ciphertext[:12], ciphertext[12:], b""
            )
        except self._invalid_tag as exc:
            raise CiphertextAuthenticationError("ciphertext failed authentication") from exc


def make_provider(name: str):
    if name in ("test", "test_double"):
        return DeterministicProvider()
    if name in ("real", "real_crypto"):
        return RealCryptoProvider()
    raise ValueError(f"unknown crypto provider {name!r}")


# ---------------------------------------------------------------------------
# Integer arithmetic: modular exponentiation, identification scheme, ring DH
# ---------------------------------------------------------------------------


def mod_pow(base: int, exp: int, modulus: int) -> int:
    """``base ** exp mod modulus`` for arbitrary-precision integers."""
    if modulus <= 1:
        raise ValueError("modulus must be greater than 1")
    if exp < 0:
        raise ValueError("exponent must be non-negative")
    return pow(base, exp, modulus)


class ZkPhase(str, Enum):
    COMMITTED = "committed"
    CHALLENGED = "challenged"
    RESPONDED = "responded"
    VERIFIED = "verified"
    FAILED = "failed"


@dataclass(frozen=True)
class ZkPublicParams:
    """Announced identification parameters: composite modulus and the
    square of the prover's secret."""

    modulus: int
    square: int


@dataclass(frozen=True)
class ZkProverSecret:
    secret: int
    modulus: int


@dataclass
class ZkSession:
    """One commit/challenge/response exchange, tracked message by message."""

    params: ZkPublicParams
    commitment: int = 0
    challenge: int = 0
    response: int = 0
    phase: ZkPhase = ZkPhase.COMMITTED


def zk_setup(p: int, q: int, secret: int) -> tuple[ZkPublicParams, ZkProverSecret]:
    """Build identification parameters from two distinct primes and a secret.

    The announced values are the composite modulus ``p*q`` and the secret's
    square modulo it; the prover keeps the secret.
    """
    if not sympy.isprime(p) or not sympy.isprime(q):
        raise ValueError("both factors must be prime")
    if p == q:
        raise ValueError("the two primes must be distinct")
    modulus = p * q
    if not 1 < secret < modulus:
        raise ValueError("secret must satisfy 1 < secret < modulus")
    params = ZkPublicParams(modulus=modulus, square=pow(secret, 2, modulus))
    return params, ZkProverSecret(secret=secret, modulus=modulus)


def zk_commit(rng: random.Random, modulus: int) -> tuple[int, int]:
    """Draw an ephemeral witness and return (commitment, witness).

    The witness is uniform in (1, modulus); the commitment is its square.
    """
    if modulus <= 3:
        raise ValueError("modulus too small to commit")
    witness = rng.randrange(2, modulus)
    return pow(witness, 2, modulus), witness


def zk_respond(witness: int, secret: int, challenge: int, modulus: int) -> int:
    """Prover's answer: witness * secret**challenge mod modulus."""
    return (witness * pow(secret, challenge, modulus)) % modulus


def zk_verify(commitment: int, square: int, challenge: int, response: int, modulus: int) -> bool:
    """Check response**2 == commitment * square**challenge (mod modulus)."""
    return pow(response, 2, modulus) == (commitment * pow(square, challenge, modulus)) % modulus


def zk_run(rng: random.Random, params: ZkPublicParams, prover: ZkProverSecret,
           challenge_bits: int = 64) -> ZkSession:
    """Drive one honest commit/challenge/response exchange to a verdict."""
    session = ZkSession(params=params)
    session.commitment, witness = zk_commit(rng, params.modulus)
    session.challenge = rng.getrandbits(challenge_bits)
    session.phase = ZkPhase.CHALLENGED
    session.response = zk_respond(witness, prover.secret, session.challenge, params.modulus)
    session.phase = ZkPhase.RESPONDED
    ok = zk_verify(
        session.commitment, params.square, session.challenge, session.response, params.modulus
    )
    session.phase = ZkPhase.VERIFIED if ok else ZkPhase.FAILED
    return session


def dh_contribute(generator: int, modulus: int, own_secret: int, accumulated: int) -> int:
    """One ring key-agreement step: raise the accumulated value to own secret.

    ``accumulated`` starts life as the generator; values 0 and 1 are
    degenerate (they would collapse the whole exchange) and are rejected.
    """
    if accumulated in (0, 1):
        raise ValueError("degenerate accumulated value")
    if not 1 < generator < modulus:
        raise ValueError("generator must lie strictly between 1 and the modulus")
    return pow(accumulated, own_secret, modulus)
