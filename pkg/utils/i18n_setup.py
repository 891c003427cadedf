import gettext
import os

from dotenv import load_dotenv

load_dotenv()

LOCALE_DIR = "locale"
DOMAIN = "messages"


def load_translation(lang: str) -> gettext.NullTranslations:
    """Catalog for `lang`, or the identity translation when none is compiled."""
    return gettext.translation(DOMAIN, localedir=LOCALE_DIR, languages=[lang], fallback=True)


translation = load_translation(os.getenv("BEATS_LANG", "en"))
_ = translation.gettext
ngettext = translation.ngettext
