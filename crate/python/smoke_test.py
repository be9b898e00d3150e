"""Smoke test for the cahicha Python extension.

Build and install first, either with maturin:

    pip install maturin && maturin develop -m crates/py/Cargo.toml

or by copying the shared library next to this script:

    cargo build -p cahicha-py --release
    cp target/release/libcahicha.so python/cahicha.so
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import cahicha  # noqa: E402

ORIGIN = "https://localhost:8443"
NOW = 1_760_000_000_000


def ceremony(engine, authenticator, **behavior):
    record_id, options = engine.issue_challenge(now_ms=NOW)
    assert json.loads(options)["authenticatorSelection"]["userVerification"] == "required"
    return authenticator.create_credential(options, record_id, ORIGIN, **behavior)


def main():
    strict = cahicha.VerificationEngine("strict", "localhost", [ORIGIN], fixture_seed=1, now_ms=NOW)
    general = cahicha.VerificationEngine("general", "localhost", [ORIGIN])
    authenticator = cahicha.SoftAuthenticator(fixture_seed=1, seed=42)

    response = ceremony(strict, authenticator)
    outcome = strict.verify(*response, now_ms=NOW)
    assert outcome.is_human and outcome.aaguid == cahicha.FIXTURE_AAGUID, outcome
    replayed = strict.verify(*response, now_ms=NOW)
    assert replayed.rejection_reason == "ChallengeReplayed", replayed

    unknown = ceremony(strict, authenticator, aaguid="00112233-4455-6677-8899-aabbccddeeff")
    assert strict.verify(*unknown, now_ms=NOW).rejection_reason == "UntrustedAuthenticator"

    no_up = ceremony(general, authenticator, user_presence=False)
    assert general.verify(*no_up, now_ms=NOW).rejection_reason == "MissingUserPresence"

    self_attested = ceremony(general, authenticator, attestation="packed-self")
    assert general.verify(*self_attested, now_ms=NOW).is_human

    record_id, attestation_object, client_data = ceremony(general, authenticator)
    tampered = bytearray(attestation_object)
    tampered[-1] ^= 0x01
    assert not general.verify(record_id, bytes(tampered), client_data, now_ms=NOW).is_human

    key = cahicha.TokenKey.generate()
    token = key.mint(now_ms=NOW)
    day_ms = 24 * 3600 * 1000
    assert key.validate(token, now_ms=NOW + day_ms) == (True, day_ms)
    assert key.validate(token, now_ms=NOW + day_ms + 1) == (False, "Expired")
    assert key.validate(token[:-2] + "AA", now_ms=NOW)[0] is False

    blob, root_pem = cahicha.fixture_mds(1)
    loaded = cahicha.VerificationEngine(
        "strict", "localhost", [ORIGIN], mds_blob=blob.encode(), mds_root=root_pem.encode(), now_ms=NOW
    )
    assert loaded.verify(*ceremony(loaded, authenticator), now_ms=NOW).is_human

    print("cahicha python smoke test passed")


if __name__ == "__main__":
    main()
