//! Compiles and runs every code block in the book (`book/src/*.md`) as a
//! doc-test, so `cargo test` fails whenever the guide drifts from the API.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub struct $name;
    };
}

chapter!(Introduction, "introduction.md");
chapter!(VectorsAndKernels, "vectors-and-kernels.md");
chapter!(Models, "models.md");
chapter!(Data, "data.md");
chapter!(Reputation, "reputation.md");
chapter!(Baselines, "baselines.md");
chapter!(Adversaries, "adversaries.md");
chapter!(Experiments, "experiments.md");
