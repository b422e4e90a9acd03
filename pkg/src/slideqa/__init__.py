"""slideqa: generative question answering over tiled whole-slide-style images.

The package is organized as a numpy library with a thin CLI / HTTP layer on
top:

- ``tiling``      -- HSV foreground segmentation and patch-grid extraction
- ``features``    -- frozen patch descriptors and the binary bag format
- ``text``        -- tokenizer, vocabulary, id sequences
- ``autodiff``    -- dense-tensor reverse-mode autodiff engine
- ``model``       -- bag encoder / co-attention text decoder
- ``training``    -- Adam loop with template resampling and checkpoints
- ``generation``  -- greedy and beam decoding, keyword attention heatmaps
- ``metrics``     -- BLEU / ROUGE-L / METEOR-lite / ACC / entity-F1 / c-index
- ``dataset``     -- template QA rendering, LLM prompt + parser, filtering,
                     splitting, corpus statistics
- ``service``     -- HTTP endpoints for interactive Q&A
- ``cli``         -- subcommand front end
"""

__version__ = "0.1.0"
