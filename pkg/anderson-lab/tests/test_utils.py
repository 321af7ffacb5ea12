import json

import numpy as np
import pytest

from utils import (as_points, bernoulli_summary, binomial_interval, chunked, file_digest, format_float, json_decoder,
                   json_encoder, make_rng, parse_options, parse_vector, unit_ball_volume, unit_sphere_area)


def test_same_stream_same_draws():
    assert make_rng(5, 1, 2).random() == make_rng(5, 1, 2).random()
    assert make_rng(5, 1, 2).random() != make_rng(5, 2, 1).random()


def test_negative_seed_is_accepted():
    assert 0.0 <= make_rng(-1).random() < 1.0


def test_json_encoder_handles_numpy():
    text = json_encoder({"b": np.float64(0.5), "a": np.arange(2), "c": np.bool_(True)})
    assert json.loads(text) == {"a": [0, 1], "b": 0.5, "c": True}
    assert text.index('"a"') < text.index('"b"')


def test_json_decoder_reraises():
    with pytest.raises(json.JSONDecodeError):
        json_decoder("{")


def test_format_float_round_trips():
    assert float(format_float(0.1)) == 0.1
    assert format_float(1.0) == "1"


def test_parse_vector():
    np.testing.assert_array_equal(parse_vector(" 0.5, 0,1 "), [0.5, 0.0, 1.0])
    with pytest.raises(ValueError):
        parse_vector(" , ")


def test_parse_options():
    assert parse_options("a=1, p=4") == {"a": "1", "p": "4"}
    with pytest.raises(ValueError):
        parse_options("a=1,p")


def test_file_digest(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_bytes(b"")
    assert file_digest(str(path)) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_unit_ball_and_sphere():
    assert unit_ball_volume(2) == pytest.approx(np.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * np.pi / 3)
    assert unit_sphere_area(3) == pytest.approx(4 * np.pi)


def test_as_points():
    assert as_points([1.0, 2.0, 3.0], 3).shape == (1, 3)
    with pytest.raises(ValueError):
        as_points(np.zeros((2, 2)), 3)


def test_chunked_covers_range():
    assert [(s.start, s.stop) for s in chunked(5, 2)] == [(0, 2), (2, 4), (4, 5)]


def test_bernoulli_summary():
    p, stderr = bernoulli_summary([True, False, False, True])
    assert p == 0.5
    assert stderr == pytest.approx(0.25)
    assert bernoulli_summary([]) == (0.0, 0.0)


def test_binomial_interval_with_no_hits():
    low, high = binomial_interval(0, 400)
    assert low == 0.0
    assert 0.0 < high < 0.03


def test_binomial_interval_covers_frequency():
    low, high = binomial_interval(37, 200, confidence=0.95)
    assert low < 37 / 200 < high
    wider = binomial_interval(37, 200, confidence=0.997)
    assert wider[0] < low and wider[1] > high
