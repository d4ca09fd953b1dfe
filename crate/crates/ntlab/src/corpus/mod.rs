//! The arithmetic text: iterated prime factorization rendered as Dyck
//! words, one word per integer, generated at scale by a segmented sieve.

pub mod factor;
pub mod generate;
pub mod sieve;
pub mod words;

pub use factor::{factorize, Factorization};
pub use generate::{
    generate_corpus, generate_corpus_file, manifest_path, open_words, CorpusManifest, CorpusStats,
    GenerateOutcome, WordStream,
};
pub use sieve::{simple_primes, SegmentFactorizer, SpfSieve};
pub use words::{
    classify_word, dictionary_growth, dyck_encode, longest_squarefree_run, phrase_count,
    prime_tower, word_of, DyckWord, FactorTree, WordClass,
};
