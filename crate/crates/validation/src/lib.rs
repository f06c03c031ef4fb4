// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks live in `tests/acceptance.rs`.
