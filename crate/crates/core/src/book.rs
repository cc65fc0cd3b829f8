//! Compiles the guide's chapters as doc-tests, so every code sample in
//! `book/` is built and run by `cargo test` and cannot drift from the API.

#[cfg(doctest)]
mod chapters {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(front_end, "../../../book/src/front-end.md");
    chapter!(lpc_baseline, "../../../book/src/lpc-baseline.md");
    chapter!(network, "../../../book/src/network.md");
    chapter!(training, "../../../book/src/training.md");
    chapter!(synthetic_corpus, "../../../book/src/synthetic-corpus.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
    chapter!(cli, "../../../book/src/cli.md");
}
