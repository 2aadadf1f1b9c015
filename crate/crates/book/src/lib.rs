//! Runs every Rust snippet of the guide in `book/src` as a doc-test.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    tensors => "tensors.md",
    autodiff => "autodiff.md",
    wavelets => "wavelets.md",
    network => "network.md",
    synthetic_data => "synthetic-data.md",
    training => "training.md",
    evaluation => "evaluation.md",
    cli => "cli.md",
}
