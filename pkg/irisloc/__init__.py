import logging

import irisloc.imgcore
import irisloc.coarse
import irisloc.refine
import irisloc.track
import irisloc.closure
import irisloc.gaze
import irisloc.config
import irisloc.pipeline
import irisloc.providers
import irisloc.benchmark
import irisloc.synth
import irisloc.serializer
import irisloc.modelfile
import irisloc.session

log = logging.getLogger(__name__)
