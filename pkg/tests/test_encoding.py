import numpy as np
import pytest

from coughtriage.encoding import (
    DEFAULT_SCHEMA,
    EncodingError,
    EncodingSchema,
    FieldSpec,
    MinMaxScaler,
    encode_record,
    minmax_fit_apply,
)

GOOD_ROW = {
    "sex": "Female", "age_years": "44", "height_cm": "162", "weight_kg": "58",
    "heart_rate_bpm": "82", "temperature_c": "37.4", "prior_tb_exposure": "Yes",
    "weight_loss": "No", "fever": "Yes", "night_sweats": "No",
    "hemoptysis": "No", "cough_duration_days": "21",
}


def test_encode_record_layout():
    v = encode_record(GOOD_ROW)
    assert v.shape == (DEFAULT_SCHEMA.width(),)
    # one-hot sex: Male slot off, Female slot on
    assert v[0] == 0.0 and v[1] == 1.0
    assert v[2] == 44.0  # age passes through unscaled
    names = DEFAULT_SCHEMA.slot_names()
    assert v[names.index("prior_tb_exposure")] == 1.0
    assert v[names.index("weight_loss")] == 0.0


def test_encode_record_oov_category_raises():
    row = dict(GOOD_ROW, sex="female")
    with pytest.raises(EncodingError):
        encode_record(row)


def test_encode_record_missing_field_raises():
    row = dict(GOOD_ROW)
    del row["fever"]
    with pytest.raises(EncodingError):
        encode_record(row)


def test_encode_record_bad_numeric_raises():
    with pytest.raises(EncodingError):
        encode_record(dict(GOOD_ROW, age_years="forty"))
    with pytest.raises(EncodingError):
        encode_record(dict(GOOD_ROW, age_years="inf"))


def test_encode_record_bad_yesno_raises():
    with pytest.raises(EncodingError):
        encode_record(dict(GOOD_ROW, fever="yes"))


def test_custom_schema_width_and_slots():
    schema = EncodingSchema(fields=(
        FieldSpec("color", "categorical", ("red", "green", "blue")),
        FieldSpec("score", "numeric"),
        FieldSpec("flag", "yesno"),
    ))
    assert schema.width() == 5
    assert schema.slot_names() == ["color=red", "color=green", "color=blue",
                                   "score", "flag"]
    assert schema.numeric_slot_indices() == [3]
    v = encode_record({"color": "blue", "score": "2.5", "flag": "No"}, schema)
    np.testing.assert_allclose(v, [0, 0, 1, 2.5, 0])


def test_minmax_scaler_matches_loop_oracle():
    rng = np.random.default_rng(0)
    train = rng.uniform(-5, 5, (30, 4))
    test = rng.uniform(-6, 6, (10, 4))
    scaler = MinMaxScaler().fit(train)
    got = scaler.transform(test)
    for j in range(4):
        lo, hi = train[:, j].min(), train[:, j].max()
        np.testing.assert_allclose(got[:, j], (test[:, j] - lo) / (hi - lo),
                                   atol=1e-12)
    # training data itself maps into [0, 1] exactly
    scaled_train = scaler.transform(train)
    assert scaled_train.min() == 0.0 and scaled_train.max() == 1.0


def test_minmax_scaler_rejects_constant_column():
    bad = np.column_stack([np.arange(5.0), np.full(5, 7.0)])
    with pytest.raises(ValueError):
        MinMaxScaler().fit(bad)


def test_minmax_scaler_requires_fit():
    with pytest.raises(RuntimeError):
        MinMaxScaler().transform(np.zeros(3))


def test_minmax_fit_apply_fits_on_train_only():
    train = np.array([0.0, 10.0])
    assert minmax_fit_apply(train, 5.0) == 0.5
    assert minmax_fit_apply(train, 20.0) == 2.0  # out of range is allowed
