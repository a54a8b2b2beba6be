import pytest

from tlsmpy.utils import canonical_hash, file_sha256, next_power_of_two


def test_next_power_of_two() -> None:
    assert next_power_of_two(1) == 1
    assert next_power_of_two(512) == 512
    assert next_power_of_two(513) == 1024
    assert next_power_of_two(2 * 145) == 512


def test_next_power_of_two_rejects_zero() -> None:
    with pytest.raises(ValueError):
        next_power_of_two(0)


def test_canonical_hash_ignores_key_order() -> None:
    a = {"grid": {"nx": 64, "ny": 64}, "seed": 3}
    b = {"seed": 3, "grid": {"ny": 64, "nx": 64}}
    assert canonical_hash(a) == canonical_hash(b)
    assert canonical_hash(a) != canonical_hash({"seed": 4, "grid": {"nx": 64, "ny": 64}})


def test_file_sha256(tmp_path) -> None:
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    assert file_sha256(path) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
