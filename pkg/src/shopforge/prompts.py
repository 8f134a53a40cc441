"""Versioned prompt wordings for the dataset recipes.

The original per-recipe wordings are not public, so these are artifact
contracts: change a wording, bump PROMPT_VERSION. Each template receives
named fields from its builder; ``{options}`` / ``{candidates}`` are numbered
"i. text" lines.
"""

PROMPT_VERSION = "1"

RECIPE_PROMPTS = {
    # ESCI ranking (query -> rank candidate products by relevance)
    5: (
        "Rank the candidate products for the user query from most to least relevant.\n"
        "Query: {query}\n"
        "Candidates:\n{candidates}\n"
        "Respond with the candidate numbers in order, separated by commas."
    ),
    # Review rating estimation, five-way choice
    7: (
        "Given a product review, estimate the rating of the review. Choose one option.\n"
        "Review: {review}\n"
        "Options:\n{options}\n"
        "Respond with the number of the correct option."
    ),
    # ESCI query -> product title choice
    8: (
        "Select the product title for the user query.\n"
        "Query: {query}\n"
        "Options:\n{options}\n"
        "Respond with the number of the correct option."
    ),
    # ESCI query -> product choice, alternate wording
    29: (
        "Pick the product that matches the user query.\n"
        "Query: {query}\n"
        "Options:\n{options}\n"
        "Respond with the number of the correct option."
    ),
    # Session retrieval: purchase -> previously clicked products
    31: (
        "Given the product a customer purchased, select the 3 products the customer "
        "previously clicked.\n"
        "Purchased: {purchased}\n"
        "Candidates:\n{candidates}\n"
        "Respond with the 3 candidate numbers separated by commas."
    ),
    # Brand choice from a product title
    32: (
        "Given the product title, pick the brand that makes it.\n"
        "Title: {title}\n"
        "Options:\n{options}\n"
        "Respond with the number of the correct option."
    ),
    # Query-product relationship classification
    33: (
        "Given the query and product pair, which of the following best describes how "
        "related they are? Choose one option.\n"
        "Query: {query}\n"
        "Product: {title}\n"
        "Options:\n{options}\n"
        "Respond with the number of the correct option."
    ),
    # Review helpfulness ranking
    36: (
        "Rank the reviews of this product from most to least helpful.\n"
        "Product: {title}\n"
        "Reviews:\n{candidates}\n"
        "Respond with the review numbers in order, separated by commas."
    ),
}


def numbered(items) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items))
