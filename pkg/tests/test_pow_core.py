from __future__ import annotations

import hashlib
import random
import struct

import pytest

from capow.errors import SolveTimeout
from capow.pow_core import (
    DEFAULT_EXPIRY_MS,
    MAX_DIFFICULTY,
    REJECT_EXPIRED,
    REJECT_REPLAY,
    REJECT_WRONG_SOLUTION,
    SEED_BYTES,
    Challenge,
    ChallengeRegistry,
    check_solution,
    issue_challenge,
    leading_zero_bits,
    pack_puzzle_input,
    puzzle_digest,
    solve,
)

GOLDEN_USER = b"golden"
GOLDEN_MS = 1_700_000_000_000
GOLDEN_SEED = bytes(range(16))
# frozen solutions for the golden challenge, found by independent search
GOLDEN_NONCES = {0: 0, 8: 123, 12: 1290}
GOLDEN_D0_DIGEST = "e77d875f40677a5866c1d043bb035bda447121917e8bccec4038eb2db9b380ce"


def golden(difficulty):
    return Challenge(
        user_id=GOLDEN_USER,
        issue_ms=GOLDEN_MS,
        seed=GOLDEN_SEED,
        difficulty=difficulty,
    )


def oracle_leading_zero_bits(digest: bytes) -> int:
    bits = bin(int.from_bytes(digest, "big"))[2:].zfill(len(digest) * 8)
    return len(bits) - len(bits.lstrip("0"))


# ── Puzzle input and digest ──────────────────────────────────────────


def test_pack_puzzle_input_layout():
    packed = pack_puzzle_input(b"ab", 7, b"S" * 16, 300)
    expected = b"\x00\x00\x00\x02" + b"ab" + (7).to_bytes(8, "big") + b"S" * 16 + (300).to_bytes(8, "big")
    assert packed == expected
    assert len(packed) == 4 + 2 + 8 + 16 + 8


def test_puzzle_digest_is_sha256_of_packed_input():
    c = golden(0)
    expected = hashlib.sha256(pack_puzzle_input(GOLDEN_USER, GOLDEN_MS, GOLDEN_SEED, 0)).digest()
    assert puzzle_digest(c, 0) == expected
    assert puzzle_digest(c, 0).hex() == GOLDEN_D0_DIGEST


def test_leading_zero_bits_known_values():
    assert leading_zero_bits(b"\x80" + b"\x00" * 31) == 0
    assert leading_zero_bits(b"\x01") == 7
    assert leading_zero_bits(b"\x00\xff") == 8
    assert leading_zero_bits(b"\x00" * 4) == 32
    with pytest.raises(ValueError):
        leading_zero_bits(b"")


def test_leading_zero_bits_matches_oracle():
    rng = random.Random(2)
    for _ in range(500):
        digest = rng.randbytes(rng.randint(1, 32))
        assert leading_zero_bits(digest) == oracle_leading_zero_bits(digest)


# ── Challenge construction ───────────────────────────────────────────


def test_challenge_validation():
    with pytest.raises(ValueError):
        Challenge(user_id=b"u", issue_ms=0, seed=b"short", difficulty=1)
    with pytest.raises(ValueError):
        Challenge(user_id=b"u", issue_ms=0, seed=bytes(16), difficulty=-1)
    with pytest.raises(ValueError):
        Challenge(user_id=b"u", issue_ms=0, seed=bytes(16), difficulty=MAX_DIFFICULTY + 1)


def test_issue_challenge_seeded_rng_is_reproducible():
    a = issue_challenge(b"u", 4, now_ms=5, rng=random.Random(1))
    b = issue_challenge(b"u", 4, now_ms=5, rng=random.Random(1))
    assert a.seed == b.seed
    assert len(a.seed) == SEED_BYTES


def test_issue_challenge_fresh_seeds():
    seeds = {issue_challenge(b"u", 1).seed for _ in range(100)}
    assert len(seeds) == 100


def test_challenge_expiry_boundary():
    c = Challenge(user_id=b"u", issue_ms=1000, seed=bytes(16), difficulty=1, expiry_ms=500)
    assert not c.expired(1499)
    assert c.expired(1500)
    assert c.expired(2000)


# ── Solver ───────────────────────────────────────────────────────────


def test_solve_golden_challenges():
    for difficulty, nonce in GOLDEN_NONCES.items():
        solution = solve(golden(difficulty))
        assert solution.nonce == nonce
        assert solution.attempts == nonce + 1
        assert solution.seed_digest == hashlib.sha256(GOLDEN_SEED).digest()


def test_solve_finds_minimal_nonce():
    c = golden(8)
    solution = solve(c)
    for nonce in range(solution.nonce):
        assert leading_zero_bits(puzzle_digest(c, nonce)) < 8
    assert check_solution(c, solution.nonce)


def test_solve_respects_start_nonce():
    c = golden(8)
    base = solve(c)
    shifted = solve(c, start_nonce=base.nonce + 1)
    assert shifted.nonce > base.nonce
    assert shifted.attempts == shifted.nonce - base.nonce


def test_solve_difficulty_zero_is_immediate():
    solution = solve(golden(0))
    assert solution.nonce == 0
    assert solution.attempts == 1


def test_solve_deadline():
    hard = Challenge(user_id=b"u", issue_ms=0, seed=bytes(16), difficulty=MAX_DIFFICULTY)
    with pytest.raises(SolveTimeout):
        solve(hard, deadline_s=0.05, deadline_check_every=512)


def test_check_solution_threshold_not_equality():
    # a nonce clearing more bits than required still verifies
    c = golden(8)
    deep = solve(golden(12))
    assert leading_zero_bits(puzzle_digest(c, deep.nonce)) >= 12
    assert check_solution(c, deep.nonce)


# ── Registry: replay, expiry, instrumentation ────────────────────────


def test_registry_accept_consumes_entry():
    reg = ChallengeRegistry()
    c = reg.issue(b"u", 4, now_ms=0)
    solution = solve(c)
    assert reg.outstanding == 1
    result = reg.verify(solution.seed_digest, solution.nonce, now_ms=1)
    assert result.accepted
    assert reg.outstanding == 0
    replay = reg.verify(solution.seed_digest, solution.nonce, now_ms=2)
    assert not replay.accepted
    assert replay.reason == REJECT_REPLAY


def test_registry_unknown_seed_is_replay():
    reg = ChallengeRegistry()
    result = reg.verify(hashlib.sha256(b"nope").digest(), 0, now_ms=0)
    assert not result.accepted
    assert result.reason == REJECT_REPLAY
    assert reg.hash_evaluations == 0


def test_registry_wrong_solution_keeps_challenge_live():
    reg = ChallengeRegistry()
    c = reg.issue(b"u", 20, now_ms=0)
    digest = c.seed_digest()
    wrong = reg.verify(digest, 0 if not check_solution(c, 0) else 1, now_ms=1)
    assert not wrong.accepted
    assert wrong.reason == REJECT_WRONG_SOLUTION
    assert reg.outstanding == 1
    # the honest solution still goes through afterwards
    solution = solve(c)
    assert reg.verify(digest, solution.nonce, now_ms=2).accepted


def test_registry_expired_challenge_rejected_without_hashing():
    reg = ChallengeRegistry()
    c = reg.issue(b"u", 0, now_ms=0, expiry_ms=100)
    before = reg.hash_evaluations
    result = reg.verify(c.seed_digest(), 0, now_ms=100)
    assert not result.accepted
    assert result.reason == REJECT_EXPIRED
    assert reg.hash_evaluations == before
    assert reg.outstanding == 0


def test_registry_verify_uses_exactly_one_hash_evaluation():
    reg = ChallengeRegistry()
    c = reg.issue(b"u", 4, now_ms=0)
    solution = solve(c)
    assert reg.hash_evaluations == 0
    reg.verify(solution.seed_digest, solution.nonce, now_ms=1)
    assert reg.hash_evaluations == 1
    c2 = reg.issue(b"u", 20, now_ms=0)
    reg.verify(c2.seed_digest(), 0 if not check_solution(c2, 0) else 1, now_ms=1)
    assert reg.hash_evaluations == 2


def test_registry_purge():
    reg = ChallengeRegistry()
    reg.issue(b"a", 1, now_ms=0, expiry_ms=10)
    keep = reg.issue(b"b", 1, now_ms=0, expiry_ms=10_000)
    removed = reg.purge(now_ms=50)
    assert removed == 1
    assert reg.outstanding == 1
    assert reg.verify(solve(keep).seed_digest, solve(keep).nonce, now_ms=60).accepted


def test_expected_attempts_scale_with_difficulty():
    rng = random.Random(77)
    totals = {}
    for difficulty in (2, 6):
        attempts = [
            solve(issue_challenge(b"u", difficulty, now_ms=0, rng=rng)).attempts
            for _ in range(300)
        ]
        totals[difficulty] = sum(attempts) / len(attempts)
    assert totals[6] > totals[2] * 4  # 16x expected; 4x leaves wide noise margin


def test_default_expiry_constant():
    c = issue_challenge(b"u", 1, now_ms=0)
    assert c.expiry_ms == DEFAULT_EXPIRY_MS == 30_000
