#include "isotropy/segment_score.h"

namespace isotropy {

// Instruction template for single-call segmentation and verification.
// Placeholders: {entity} {reference_doc} {response} {{example_one}} {{example_two}}.
std::string_view segment_score_template() {
    static constexpr std::string_view kTemplate = R"PROMPT(You are an NLP segmentation and evaluation engine. 
Examine the scenario below. You are given:
1. The name of an entity/person/place/thing etc. in <entity> tags.
2. A reference document regarding the entity in <reference_doc> tags.
3. A response about the entity to evaluate in <response> tags.

### Your Tasks:
1. **Segmentation Task:**
   Segment the `<response>` into individual statements. Each statement can be a sentence, phrase or word and should convey a single, complete, and independent piece of information about the `<entity>`. Do not modify, rephrase, or paraphrase the original text. Ensure no semantic overlaps exist between statements. Individual proper nouns should be part of their own statement however when determining the appropriate classification, preceeding context can be used when appropriate.
   Verify that the concatenated content of all statements exactly matches the original response.

   Format the segmented response as follows:
   ```
   <statements>
   <statement>Statement 1</statement> <class>Class 1</class>
   <statement>Statement 2</statement> <class>Class 2</class>
   ...
   </statements>
   ```

2. **Factual Classification Task:**
   For each segmented `<statement>`, classify it as 1 (True) or 0 (False) based solely on the information in the `<reference_doc>`. Follow these guidelines:
   - If a statement is factually accurate and supported by the `<reference_doc>`, classify it as '1'.
   - If a statement is inaccurate, unverifiable, or not supported by the `<reference_doc>`, classify it as '0'.
   - If a statement is partially true, but contains incorrect or unsupported information, classify it as '0'.
   - Do not rely on any external knowledge or context beyond the `<reference_doc>`.
   - Include only the classification for each statement. Do not provide any explanations or additional information.
   - Specify the class in <class> tags.
   - The ONLY valid class values are `1` and `0`. No other values or words should appear within the `<class>` tags.

3. **Error Handling:**
   - If the `<response>` contains unparseable text, incomplete sentences, or conflicting information that cannot be resolved using the `<reference_doc>`, include the flagged statement as is and classify it as '0'.

Examples:
####### EXAMPLE 1 ######
{{example_one}}
########################
####### EXAMPLE 2 ######
{{example_two}}
########################

Entity:
<entity>
{entity}
</entity>

Reference Document:
<reference_doc>
{reference_doc}
</reference_doc>

Response to Evaluate:
<response>
{response}
</response>)PROMPT";
    return kTemplate;
}

PromptExamples default_examples() {
    static constexpr std::string_view kLondon = R"PROMPT(<entity>
London, UK
</entity>

Reference Document:
<reference_doc>
London, England's capital, boasts a rich history spanning millennia. Founded by the Romans as Londinium around 47 AD, it became a major port and trading center. After the Roman withdrawal, Anglo-Saxons established Lundenwic, which later fell to Viking raids. The Norman Conquest in 1066 led to the construction of the Tower of London, a symbol of royal power. London thrived during the medieval period, becoming a major center for trade, finance, and culture. It weathered plagues, fires, and civil wars, emerging as a global metropolis and the heart of the British Empire. Today, London remains a vibrant hub, blending its historical legacy with modern dynamism, home to over 9 million people.
</reference_doc>

Response to Evaluate:
<response>
London, the capital city of England and the United Kingdom, is a vibrant metropolis steeped in history and brimming with modern energy. With a population of over 9 million people, it stands as one of the world's most influential global cities, known for its diverse culture, iconic landmarks, and rich heritage.

The city's history stretches back over three millennia, founded by the Romans as Londinium in 43 AD. Throughout the centuries, London has played a pivotal role in world affairs, serving as the heart of the British Empire and surviving tumultuous events such as the Great Fire of 1666 and the Blitz during World War I.

Today, London is a melting pot of cultures, with over 300 languages spoken within its boundaries. This diversity is reflected in its neighborhoods, each with its own unique character and charm. From the trendy streets of Shoreditch to the upscale boutiques of Mayfair, there's something for everyone in this cosmopolitan city.
</response>

Segmented and classified response:
<statements>
<statement>London, the capital city of England and the United Kingdom</statement> <class>1</class>
<statement>is a vibrant metropolis steeped in history and brimming with modern energy</statement> <class>1</class>
<statement>With a population of over 9 million people</statement> <class>1</class>
<statement>it stands as one of the world's most influential global cities, known for its diverse culture, iconic landmarks, and rich heritage.</statement> <class>1</class>
<statement>The city's history stretches back over three millennia, founded by the Romans as Londinium in 43 AD</statement> <class>0</class>
<statement>Throughout the centuries, London has played a pivotal role in world affairs, serving as the heart of the British Empire</statement> <class>1</class>
<statement>and surviving tumultuous events such as the Great Fire of 1666</statement> <class>1</class>
<statement>and the Blitz during World War I</statement> <class>0</class>
<statement>Today, London is a melting pot of cultures, with over 300 languages spoken within its boundaries</statement> <class>1</class>
<statement>This diversity is reflected in its neighborhoods, each with its own unique character and charm.</statement> <class>1</class>
<statement>From the trendy streets of Shoreditch to the upscale boutiques of Mayfair, there's something for everyone in this cosmopolitan city</statement> <class>1</class>
</statements>)PROMPT";
    static constexpr std::string_view kCurie = R"PROMPT(<entity>
Marie Curie
</entity>

Reference Document:
<reference_doc>
Marie Curie (born Maria Sklodowska, 1867, Warsaw) was a Polish and naturalised-French physicist and chemist who conducted pioneering research on radioactivity. She moved to Paris in 1891 to study at the University of Paris. With her husband Pierre Curie she discovered the elements polonium and radium in 1898. She was the first woman to win a Nobel Prize, sharing the 1903 Nobel Prize in Physics with Pierre Curie and Henri Becquerel, and she won the 1911 Nobel Prize in Chemistry alone, making her the first person to win Nobel Prizes in two scientific fields. She died in 1934 of aplastic anaemia, likely caused by long-term radiation exposure.
</reference_doc>

Response to Evaluate:
<response>
Marie Curie was a Polish-born scientist who became one of the most celebrated researchers in history. Born in Krakow in 1867, she moved to Paris to pursue her studies. Together with Pierre Curie, she discovered polonium and radium. She won the Nobel Prize in Physics in 1903 and the Nobel Prize in Chemistry in 1911, becoming the first person honored in two scientific fields. She also invented the X-ray machine.
</response>

Segmented and classified response:
<statements>
<statement>Marie Curie was a Polish-born scientist</statement> <class>1</class>
<statement>who became one of the most celebrated researchers in history.</statement> <class>0</class>
<statement>Born in Krakow</statement> <class>0</class>
<statement>in 1867</statement> <class>1</class>
<statement>she moved to Paris to pursue her studies.</statement> <class>1</class>
<statement>Together with Pierre Curie, she discovered polonium and radium.</statement> <class>1</class>
<statement>She won the Nobel Prize in Physics in 1903</statement> <class>1</class>
<statement>and the Nobel Prize in Chemistry in 1911</statement> <class>1</class>
<statement>becoming the first person honored in two scientific fields.</statement> <class>1</class>
<statement>She also invented the X-ray machine.</statement> <class>0</class>
</statements>)PROMPT";
    return {std::string(kLondon), std::string(kCurie)};
}

}  // namespace isotropy
