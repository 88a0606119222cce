import numpy as np
import pytest

from src.core.exceptions import CheckpointIOError, FormatError, InvalidArgumentError
from src.core.inference import PosteriorSamples, SghmcConfig
from src.core.rng import SeededRng
from src.core.sbnn import init_hyperparams
from src.utils.data_writer import DataWriter
from src.utils.formats import (
    REALISATION_MAGIC,
    Checkpoint,
    decode_header,
    decode_posterior,
    decode_realisations,
    encode_header,
    encode_posterior,
    encode_realisations,
)


def test_header_fields_and_offset():
    data = encode_header("MAGIC", [("count", 3), ("bounds", [-4.0, 4.0])]) + b"payload"
    fields, offset = decode_header(data, "MAGIC")
    assert fields == {"version": "1", "count": "3", "bounds": "-4.0 4.0"}
    assert data[offset:] == b"payload"


def test_wrong_magic_points_at_first_line():
    with pytest.raises(FormatError) as info:
        decode_header(encode_header("OTHER", []), REALISATION_MAGIC)
    assert info.value.line == 1


def test_unsupported_version():
    data = f"{REALISATION_MAGIC}\nversion 7\nend\n".encode("ascii")
    with pytest.raises(FormatError, match="version"):
        decode_header(data, REALISATION_MAGIC)


def test_unterminated_header():
    with pytest.raises(FormatError, match="end"):
        decode_header(f"{REALISATION_MAGIC}\nversion 1\n".encode("ascii"), REALISATION_MAGIC)


def test_realisations_keep_mean_field(grid_4x4, rng):
    values, mean_field = rng.normal((3, 16)), rng.normal(16)
    loaded = decode_realisations(encode_realisations(values, grid_4x4, mean_field=mean_field))
    assert loaded.grid == grid_4x4
    assert not loaded.log
    np.testing.assert_array_equal(loaded.samples.values, values)
    np.testing.assert_array_equal(loaded.mean_field, mean_field)


def test_log_flag_is_applied_on_load(grid_1d, rng):
    values = np.exp(rng.normal((2, 32)))
    loaded = decode_realisations(encode_realisations(values, grid_1d, log=True))
    assert loaded.log
    np.testing.assert_allclose(loaded.samples.values, np.log(values))


def test_short_file_reports_first_missing_record(grid_4x4, rng):
    data = encode_realisations(rng.normal((3, 16)), grid_4x4)
    with pytest.raises(FormatError) as info:
        decode_realisations(data[: -8 * 20])
    assert info.value.record == 1


def test_non_finite_record_is_reported(grid_4x4):
    values = np.zeros((3, 16))
    values[2, 5] = np.nan
    with pytest.raises(FormatError) as info:
        decode_realisations(encode_realisations(values, grid_4x4))
    assert info.value.record == 2


def test_trailing_payload_is_rejected(grid_4x4):
    data = encode_realisations(np.zeros((1, 16)), grid_4x4) + np.zeros(3).tobytes()
    with pytest.raises(FormatError, match="trailing"):
        decode_realisations(data)


def test_realisations_must_fit_the_grid(grid_4x4):
    with pytest.raises(InvalidArgumentError):
        encode_realisations(np.zeros((2, 15)), grid_4x4)


def test_checkpoint_restores_architecture_and_hyperparams(tiny_sbnn_il, grid_4x4, rng):
    psi = init_hyperparams(tiny_sbnn_il, rng)
    mean_field = rng.normal(16)
    stored = Checkpoint.from_hyperparams(
        psi, tiny_sbnn_il, seed=99, mean_field=mean_field, grid=grid_4x4, log_scale=True
    )
    loaded = Checkpoint.decode(stored.encode())

    arch = loaded.architecture()
    assert arch.variant is tiny_sbnn_il.variant
    assert arch.dims == tiny_sbnn_il.dims
    assert arch.embedding.centroids == tiny_sbnn_il.embedding.centroids
    assert loaded.seed == 99
    assert loaded.log_scale
    assert loaded.grid == grid_4x4
    np.testing.assert_array_equal(loaded.hyperparams().flatten(), psi.flatten())
    np.testing.assert_array_equal(loaded.mean_field, mean_field)
    assert loaded.checkpoint_id == stored.checkpoint_id


def test_checkpoint_without_embedding_or_mean_field(tiny_bnn_ip):
    psi = init_hyperparams(tiny_bnn_ip)
    loaded = Checkpoint.decode(Checkpoint.from_hyperparams(psi, tiny_bnn_ip).encode())
    assert loaded.centroids is None
    assert loaded.mean_field is None
    assert loaded.architecture().embedding is None
    assert not loaded.log_scale


def test_checkpoint_id_tracks_contents(tiny_bnn_ip):
    psi = init_hyperparams(tiny_bnn_ip)
    first = Checkpoint.from_hyperparams(psi, tiny_bnn_ip)
    shifted = Checkpoint(first.variant, first.dims, first.tau, None, first.psi + 1.0)
    assert len(first.checkpoint_id) == 16
    assert first.checkpoint_id != shifted.checkpoint_id


def test_checkpoint_size_must_match_architecture(tiny_bnn_ip):
    psi = init_hyperparams(tiny_bnn_ip).flatten()
    broken = Checkpoint("BNN-IP", tiny_bnn_ip.dims, 1.0, None, psi[:-2])
    with pytest.raises(FormatError, match="hyper-parameters"):
        Checkpoint.decode(broken.encode())


def test_posterior_file_keeps_draws_and_settings():
    config = SghmcConfig(chains=2, iterations=10, burn_in=4, thin=2, minibatch=3, seed=7)
    draws = SeededRng(3).normal((2, 3, 5))
    loaded = decode_posterior(encode_posterior(PosteriorSamples(draws, "abc123", config)))
    np.testing.assert_array_equal(loaded.draws, draws)
    assert loaded.checkpoint_id == "abc123"
    assert loaded.config == config


def test_writer_leaves_no_temporary_files(tmp_path, grid_4x4):
    writer = DataWriter(tmp_path / "out")
    path = writer.write_realisations("fields.sbr", np.zeros((2, 16)), grid_4x4)
    assert [p.name for p in path.parent.iterdir()] == ["fields.sbr"]
    assert decode_realisations(path.read_bytes()).samples.values.shape == (2, 16)


def test_writer_failure_raises_checkpoint_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(CheckpointIOError):
        DataWriter(blocker).write_bytes("file.bin", b"data")


def test_checkpoint_reencodes_byte_identically(tiny_sbnn_il, grid_4x4, rng):
    stored = Checkpoint.from_hyperparams(
        init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, seed=5, mean_field=rng.normal(16), grid=grid_4x4
    )
    data = stored.encode()
    assert Checkpoint.decode(data).encode() == data
