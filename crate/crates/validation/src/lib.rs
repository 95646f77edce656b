//! Holds the `acceptance` test target (`cargo test -p conecraft-validation`).
//! It lives in its own package so that it runs after every other test target.
