"""Additively homomorphic encryption (Paillier, g = n + 1 variant).

Ciphertext multiplication corresponds to plaintext addition and ciphertext
exponentiation to plaintext-by-scalar multiplication, which is exactly what
weighted federated averaging needs on the server side.

This is a protocol-fidelity implementation, NOT a hardened cryptosystem:
big-integer arithmetic is not constant-time and no chosen-ciphertext
defenses are attempted. Do not use it to protect real data.
"""

from __future__ import annotations

import hashlib
import random
import secrets
from dataclasses import dataclass

import gmpy2

from .exceptions import InvalidInputError, KeyMismatchError

DEFAULT_KEY_BITS = 2048


@dataclass(frozen=True)
class PublicKey:
    """Modulus n (with generator g = n + 1 implicit) and cached n^2."""

    n: int
    key_bits: int

    @property
    def n_squared(self) -> int:
        return self.n * self.n

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.n.to_bytes((self.n.bit_length() + 7) // 8, "big")).hexdigest()[
            :16
        ]

    # Largest packed plaintext guaranteed below n: one bit of headroom.
    @property
    def plaintext_bits(self) -> int:
        return self.key_bits - 1


@dataclass(frozen=True)
class SecretKey:
    """Carmichael trapdoor (lambda, mu) bound to its public half."""

    public: PublicKey
    lam: int
    mu: int


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey


@dataclass(frozen=True)
class Ciphertext:
    """A single Paillier ciphertext, tagged with its key fingerprint."""

    value: int
    key_fingerprint: str


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        p = int(gmpy2.next_prime(candidate))
        if p.bit_length() == bits:
            return p


def keygen(bits: int = DEFAULT_KEY_BITS, seed: int | None = None) -> KeyPair:
    """Generate a key pair. A seed gives reproducible (test-only) keys;
    without one the primes come from the OS entropy pool."""
    if bits < 64:
        raise InvalidInputError(f"key size {bits} is too small to be meaningful")
    if seed is None:
        rng = random.Random(secrets.randbits(256))
    else:
        rng = random.Random(seed)
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits - bits // 2, rng)
        n = p * q
        if p != q and n.bit_length() == bits:
            break
    phi = (p - 1) * (q - 1)
    mu = int(gmpy2.invert(phi, n))
    public = PublicKey(n=n, key_bits=bits)
    return KeyPair(public=public, secret=SecretKey(public=public, lam=phi, mu=mu))


def encrypt(pk: PublicKey, plaintext: int, rng: random.Random | None = None) -> Ciphertext:
    """Randomized encryption of an integer in [0, n)."""
    if not 0 <= plaintext < pk.n:
        raise InvalidInputError(
            f"plaintext must be in [0, n); got {plaintext.bit_length()} bits "
            f"against a {pk.n.bit_length()}-bit modulus"
        )
    while True:
        r = secrets.randbelow(pk.n) if rng is None else rng.randrange(1, pk.n)
        if r != 0 and gmpy2.gcd(r, pk.n) == 1:
            break
    n_sq = pk.n_squared
    # (1 + n)^m mod n^2 == 1 + m*n mod n^2, so no exponentiation for g^m.
    g_m = (1 + plaintext * pk.n) % n_sq
    value = int(g_m * gmpy2.powmod(r, pk.n, n_sq) % n_sq)
    return Ciphertext(value=value, key_fingerprint=pk.fingerprint)


def _check_same_key(pk: PublicKey, *cts: Ciphertext) -> None:
    for ct in cts:
        if ct.key_fingerprint != pk.fingerprint:
            raise KeyMismatchError(
                f"ciphertext under key {ct.key_fingerprint} mixed with key {pk.fingerprint}"
            )


def he_add(pk: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition: decrypts to the sum of the plaintexts mod n."""
    _check_same_key(pk, a, b)
    return Ciphertext(value=(a.value * b.value) % pk.n_squared, key_fingerprint=pk.fingerprint)


def he_scale(pk: PublicKey, ct: Ciphertext, k: int) -> Ciphertext:
    """Homomorphic scalar multiplication by a positive integer."""
    _check_same_key(pk, ct)
    if k < 1:
        raise InvalidInputError(f"scalar must be a positive integer, got {k}")
    return Ciphertext(
        value=int(gmpy2.powmod(ct.value, k, pk.n_squared)), key_fingerprint=pk.fingerprint
    )


def decrypt(sk: SecretKey, ct: Ciphertext) -> int:
    pk = sk.public
    _check_same_key(pk, ct)
    if not 0 <= ct.value < pk.n_squared:
        raise InvalidInputError("ciphertext out of range for this key")
    x = int(gmpy2.powmod(ct.value, sk.lam, pk.n_squared))
    if x % pk.n != 1:
        raise InvalidInputError("ciphertext does not decrypt cleanly under this key")
    l_value = (x - 1) // pk.n
    return (l_value * sk.mu) % pk.n
