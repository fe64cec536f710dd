#pragma once

#include "gah/attention.hpp"
#include "gah/checkpoint.hpp"
#include "gah/codes.hpp"
#include "gah/dataset.hpp"
#include "gah/diffcore.hpp"
#include "gah/filter.hpp"
#include "gah/graph_builder.hpp"
#include "gah/io.hpp"
#include "gah/layers.hpp"
#include "gah/losses.hpp"
#include "gah/model.hpp"
#include "gah/mstvh_model.hpp"
#include "gah/optim.hpp"
#include "gah/parallel.hpp"
#include "gah/random.hpp"
#include "gah/retrieval.hpp"
#include "gah/stvh_model.hpp"
#include "gah/synth_frontend.hpp"
#include "gah/trainer.hpp"
