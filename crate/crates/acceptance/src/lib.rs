//! Acceptance criteria for `silt`, run as the `acceptance` test target.
