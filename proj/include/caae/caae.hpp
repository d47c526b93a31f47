#pragma once

#include "caae/tensor.hpp"
#include "caae/autodiff.hpp"
#include "caae/optim.hpp"
#include "caae/data.hpp"
#include "caae/synthetic.hpp"
#include "caae/seqnet.hpp"
#include "caae/fusion.hpp"
#include "caae/model.hpp"
#include "caae/training.hpp"
#include "caae/checkpoint.hpp"
#include "caae/run.hpp"
#include "caae/bleu.hpp"
#include "caae/eval.hpp"
#include "caae/gradcheck.hpp"
