"""
Validation Module for AQR-HNSW Configurations
==============================================
Schema-based range and type checks for build/search configurations and
API payloads. Produces structured results; ``require_valid`` converts a
failed result into a ConfigurationError.
"""

import math
from dataclasses import asdict, dataclass, is_dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

from .exceptions import ConfigurationError


# ============================================================================
# Type Definitions
# ============================================================================

class FieldType(Enum):
    """Supported field types for validation"""
    INTEGER = "integer"
    FLOAT = "float"
    BOOLEAN = "boolean"
    STRING = "string"
    ANY = "any"


@dataclass
class ValidationResult:
    """Structured validation result"""
    is_valid: bool
    missing_fields: List[str]
    message: str
    invalid_fields: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for API responses"""
        result = {
            "is_valid": self.is_valid,
            "missing_fields": self.missing_fields,
            "message": self.message
        }
        if self.invalid_fields:
            result["invalid_fields"] = self.invalid_fields
        return result


@dataclass
class FieldSchema:
    """Schema definition for a field"""
    name: str
    required: bool = True
    field_type: FieldType = FieldType.ANY
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    exclusive_minimum: bool = False
    exclusive_maximum: bool = False
    validator: Optional[Callable[[Any], bool]] = None
    description: str = ""


# ============================================================================
# Validator Class
# ============================================================================

class PayloadValidator:
    """
    Validates a mapping (or dataclass) against a list of FieldSchema entries.
    """

    def __init__(self, schema: List[FieldSchema]):
        self.schema = schema
        self.required_fields = {field.name for field in schema if field.required}
        self.all_fields = {field.name: field for field in schema}

    def validate(self, payload: Any) -> ValidationResult:
        """
        Validate a payload against the schema.

        Args:
            payload: Dictionary or dataclass instance

        Returns:
            ValidationResult with validation status and details
        """
        if is_dataclass(payload) and not isinstance(payload, type):
            payload = asdict(payload)
        present = {key: value for key, value in payload.items() if value is not None}

        missing_fields = sorted(self.required_fields - set(present))
        invalid_fields = self._check_field_validity(present)
        is_valid = not missing_fields and not invalid_fields

        return ValidationResult(
            is_valid=is_valid,
            missing_fields=missing_fields,
            message=self._generate_message(is_valid, missing_fields, invalid_fields),
            invalid_fields=invalid_fields or None,
        )

    def _check_field_validity(self, payload: Dict[str, Any]) -> Dict[str, str]:
        invalid_fields = {}

        for field_name, field_value in payload.items():
            if field_name not in self.all_fields:
                continue
            field_schema = self.all_fields[field_name]

            if not self._check_type(field_value, field_schema.field_type):
                invalid_fields[field_name] = f"Invalid type: expected {field_schema.field_type.value}"
                continue

            range_error = self._check_range(field_value, field_schema)
            if range_error:
                invalid_fields[field_name] = range_error
                continue

            if field_schema.validator and not field_schema.validator(field_value):
                invalid_fields[field_name] = "Failed custom validation"

        return invalid_fields

    def _check_type(self, value: Any, expected_type: FieldType) -> bool:
        if expected_type == FieldType.ANY:
            return True

        if expected_type == FieldType.INTEGER:
            return isinstance(value, int) and not isinstance(value, bool)

        if expected_type == FieldType.FLOAT:
            return isinstance(value, (int, float)) and not isinstance(value, bool) and not math.isnan(value)

        if expected_type == FieldType.BOOLEAN:
            return isinstance(value, bool)

        if expected_type == FieldType.STRING:
            return isinstance(value, str)

        return False

    def _check_range(self, value: Any, schema: FieldSchema) -> Optional[str]:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return None
        if schema.minimum is not None:
            too_small = value <= schema.minimum if schema.exclusive_minimum else value < schema.minimum
            if too_small:
                op = ">" if schema.exclusive_minimum else ">="
                return f"must be {op} {schema.minimum}"
        if schema.maximum is not None:
            too_large = value >= schema.maximum if schema.exclusive_maximum else value > schema.maximum
            if too_large:
                op = "<" if schema.exclusive_maximum else "<="
                return f"must be {op} {schema.maximum}"
        return None

    def _generate_message(
        self,
        is_valid: bool,
        missing_fields: List[str],
        invalid_fields: Dict[str, str]
    ) -> str:
        if is_valid:
            return "Validation successful"

        messages = []

        if missing_fields:
            messages.append(f"Missing required fields: {', '.join(missing_fields)}")

        if invalid_fields:
            invalid_list = [f"{field} ({error})" for field, error in invalid_fields.items()]
            messages.append(f"Invalid fields: {', '.join(invalid_list)}")

        return "; ".join(messages)


# ============================================================================
# Schema Builder Helper
# ============================================================================

class SchemaBuilder:
    """
    Helper class for building validation schemas fluently.
    """

    def __init__(self):
        self.fields: List[FieldSchema] = []

    def add_field(
        self,
        name: str,
        required: bool = True,
        field_type: FieldType = FieldType.ANY,
        minimum: Optional[float] = None,
        maximum: Optional[float] = None,
        exclusive_minimum: bool = False,
        exclusive_maximum: bool = False,
        validator: Optional[Callable[[Any], bool]] = None,
        description: str = ""
    ) -> 'SchemaBuilder':
        """
        Add a field to the schema.

        Returns:
            Self for method chaining
        """
        self.fields.append(FieldSchema(
            name=name,
            required=required,
            field_type=field_type,
            minimum=minimum,
            maximum=maximum,
            exclusive_minimum=exclusive_minimum,
            exclusive_maximum=exclusive_maximum,
            validator=validator,
            description=description
        ))
        return self

    def build(self) -> List[FieldSchema]:
        """Build and return the schema"""
        return self.fields


def require_valid(result: ValidationResult, what: str) -> None:
    """Raise ConfigurationError carrying the result when validation failed."""
    if not result.is_valid:
        raise ConfigurationError(f"invalid {what}: {result.message}", details=result.to_dict())
