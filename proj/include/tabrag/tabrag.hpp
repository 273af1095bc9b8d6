#pragma once

// Umbrella header for the table-retrieval engine: corpus handling, trainable
// bi-encoder retrieval, vector index, relevance reranking, prompt assembly
// and generation, evaluation metrics, and cost accounting.

#include "tabrag/common.hpp"
#include "tabrag/corpus.hpp"
#include "tabrag/cost.hpp"
#include "tabrag/embed.hpp"
#include "tabrag/eval.hpp"
#include "tabrag/generate.hpp"
#include "tabrag/index.hpp"
#include "tabrag/pipeline.hpp"
#include "tabrag/rerank.hpp"
