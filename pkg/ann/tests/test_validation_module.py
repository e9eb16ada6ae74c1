from dataclasses import dataclass
from typing import Optional

from django.test import SimpleTestCase

from ann.services.exceptions import ConfigurationError
from ann.services.validation_module import (
    FieldType,
    PayloadValidator,
    SchemaBuilder,
    require_valid,
)


def _schema():
    return (SchemaBuilder()
        .add_field("k", field_type=FieldType.INTEGER, minimum=1)
        .add_field("p_max", field_type=FieldType.FLOAT, minimum=0, maximum=50,
                   exclusive_minimum=True, exclusive_maximum=True)
        .add_field("label", required=False, field_type=FieldType.STRING,
                   validator=lambda value: value.islower())
        .add_field("enabled", required=False, field_type=FieldType.BOOLEAN)
        .build()
    )


@dataclass
class _Params:
    k: int
    p_max: float
    label: Optional[str] = None


class PayloadValidatorTests(SimpleTestCase):

    def test_valid_dict(self):
        result = PayloadValidator(_schema()).validate({"k": 3, "p_max": 5.0, "label": "aqr"})
        self.assertTrue(result.is_valid)
        self.assertEqual(result.message, "Validation successful")

    def test_dataclass_payload_with_none_optional(self):
        self.assertTrue(PayloadValidator(_schema()).validate(_Params(k=1, p_max=0.5)).is_valid)

    def test_missing_required(self):
        result = PayloadValidator(_schema()).validate({"k": 3})
        self.assertFalse(result.is_valid)
        self.assertEqual(result.missing_fields, ["p_max"])
        self.assertIn("Missing required fields: p_max", result.message)

    def test_type_and_range_errors(self):
        result = PayloadValidator(_schema()).validate(
            {"k": True, "p_max": 50.0, "label": "AQR", "enabled": "yes"}
        )
        self.assertEqual(set(result.invalid_fields), {"k", "p_max", "label", "enabled"})
        self.assertEqual(result.invalid_fields["p_max"], "must be < 50")
        self.assertEqual(result.invalid_fields["label"], "Failed custom validation")

    def test_exclusive_minimum(self):
        result = PayloadValidator(_schema()).validate({"k": 1, "p_max": 0})
        self.assertEqual(result.invalid_fields, {"p_max": "must be > 0"})

    def test_nan_is_not_a_float(self):
        result = PayloadValidator(_schema()).validate({"k": 1, "p_max": float("nan")})
        self.assertIn("p_max", result.invalid_fields)

    def test_to_dict_omits_empty_invalid_fields(self):
        result = PayloadValidator(_schema()).validate({"k": 1, "p_max": 1.0})
        self.assertNotIn("invalid_fields", result.to_dict())


class RequireValidTests(SimpleTestCase):

    def test_raises_with_details(self):
        result = PayloadValidator(_schema()).validate({"k": 0, "p_max": 1.0})
        with self.assertRaises(ConfigurationError) as ctx:
            require_valid(result, "search config")
        self.assertTrue(ctx.exception.message.startswith("invalid search config"))
        self.assertEqual(ctx.exception.details["invalid_fields"], {"k": "must be >= 1"})

    def test_passes_valid_results(self):
        require_valid(PayloadValidator(_schema()).validate({"k": 2, "p_max": 1.0}), "build config")
